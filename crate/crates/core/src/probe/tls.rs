use std::sync::Arc;

use rustls::pki_types::pem::PemObject;
use rustls::pki_types::CertificateDer;
use rustls::{ClientConfig, RootCertStore};

/// Certificate trust used by HTTPS probes.
///
/// The default trusts only the bundled public roots. `extra_roots_pem` adds
/// further anchors, which is how tests trust the mock fleet's self-signed
/// certificate without turning verification off.
#[derive(Debug, Clone, Default)]
pub struct TlsTrust {
    pub extra_roots_pem: Option<Vec<u8>>,
}

impl TlsTrust {
    pub fn with_extra_root_pem(pem: impl Into<Vec<u8>>) -> Self {
        TlsTrust {
            extra_roots_pem: Some(pem.into()),
        }
    }
}

pub fn client_config(trust: &TlsTrust) -> Result<Arc<ClientConfig>, String> {
    let mut roots = RootCertStore::empty();
    roots.extend(webpki_roots::TLS_SERVER_ROOTS.iter().cloned());
    if let Some(pem) = &trust.extra_roots_pem {
        let mut added = 0;
        for cert in CertificateDer::pem_slice_iter(pem) {
            let cert = cert.map_err(|e| format!("bad trust PEM: {e}"))?;
            roots
                .add(cert)
                .map_err(|e| format!("cannot add trust anchor: {e}"))?;
            added += 1;
        }
        if added == 0 {
            return Err("trust PEM holds no certificates".into());
        }
    }
    let provider = Arc::new(rustls::crypto::ring::default_provider());
    let config = ClientConfig::builder_with_provider(provider)
        .with_protocol_versions(&[&rustls::version::TLS13, &rustls::version::TLS12])
        .map_err(|e| e.to_string())?
        .with_root_certificates(roots)
        .with_no_client_auth();
    Ok(Arc::new(config))
}
