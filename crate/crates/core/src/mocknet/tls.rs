//! TLS side of the mock: a self-signed ECDSA certificate, real rustls
//! handshakes where rustls implements the chosen suite, and an emulated
//! ServerHello for legacy suites no modern library will negotiate.

use std::collections::HashMap;
use std::sync::Arc;

use rustls::crypto::CryptoProvider;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use rustls::{ServerConfig, SupportedCipherSuite};

use crate::tlsscan::{is_tls13_suite, suite_code, suite_name, ClientHelloInfo, HelloVersion};

pub(crate) enum Choice {
    Real(Arc<ServerConfig>),
    Emulate(u16, HelloVersion),
    Refuse,
}

pub(crate) struct MockTls {
    pub cert_pem: String,
    default_config: Arc<ServerConfig>,
    real: HashMap<u16, Arc<ServerConfig>>,
    preference: Option<Vec<u16>>,
}

fn rustls_suite(code: u16) -> Option<SupportedCipherSuite> {
    rustls::crypto::ring::ALL_CIPHER_SUITES
        .iter()
        .copied()
        .find(|s| u16::from(s.suite()) == code)
}

/// The mock certificate is ECDSA, so TLS 1.2 suites need ECDSA authentication.
fn usable_with_cert(code: u16) -> bool {
    is_tls13_suite(code) || suite_name(code).is_some_and(|n| n.starts_with("ECDHE-ECDSA-"))
}

fn server_config(
    suites: Vec<SupportedCipherSuite>,
    versions: &[&'static rustls::SupportedProtocolVersion],
    cert: &CertificateDer<'static>,
    key: &[u8],
) -> Result<Arc<ServerConfig>, String> {
    let provider = CryptoProvider {
        cipher_suites: suites,
        ..rustls::crypto::ring::default_provider()
    };
    let config = ServerConfig::builder_with_provider(Arc::new(provider))
        .with_protocol_versions(versions)
        .map_err(|e| e.to_string())?
        .with_no_client_auth()
        .with_single_cert(
            vec![cert.clone()],
            PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(key.to_vec())),
        )
        .map_err(|e| e.to_string())?;
    Ok(Arc::new(config))
}

impl MockTls {
    pub fn new(preference: Option<&[String]>) -> Result<Self, String> {
        let certified = rcgen::generate_simple_self_signed(vec![
            "localhost".to_string(),
            "127.0.0.1".to_string(),
            "::1".to_string(),
        ])
        .map_err(|e| format!("cannot generate mock certificate: {e}"))?;
        let cert_pem = certified.cert.pem();
        let cert = certified.cert.der().clone();
        let key = certified.key_pair.serialize_der();

        let default_config = server_config(
            rustls::crypto::ring::DEFAULT_CIPHER_SUITES.to_vec(),
            &[&rustls::version::TLS13, &rustls::version::TLS12],
            &cert,
            &key,
        )?;
        let mut real = HashMap::new();
        let mut codes = None;
        if let Some(names) = preference {
            let mut list = Vec::with_capacity(names.len());
            for name in names {
                let code = suite_code(name).ok_or_else(|| format!("unknown suite {name}"))?;
                list.push(code);
                if let Some(s) = rustls_suite(code).filter(|_| usable_with_cert(code)) {
                    let version: &'static rustls::SupportedProtocolVersion = if is_tls13_suite(code) {
                        &rustls::version::TLS13
                    } else {
                        &rustls::version::TLS12
                    };
                    real.insert(code, server_config(vec![s], &[version], &cert, &key)?);
                }
            }
            codes = Some(list);
        }
        Ok(MockTls {
            cert_pem,
            default_config,
            real,
            preference: codes,
        })
    }

    pub fn default_config(&self) -> Arc<ServerConfig> {
        Arc::clone(&self.default_config)
    }

    /// Server-preference selection: the first preferred suite the client
    /// offers, TLS 1.3 ahead of older versions when the client supports it.
    pub fn choose(&self, hello: &ClientHelloInfo) -> Choice {
        let Some(pref) = &self.preference else {
            return Choice::Real(self.default_config());
        };
        let offered = |c: &u16| hello.suites.contains(c);
        let pick13 = hello
            .offers_tls13()
            .then(|| pref.iter().copied().find(|c| is_tls13_suite(*c) && offered(c)))
            .flatten();
        let pick = pick13.or_else(|| {
            pref.iter()
                .copied()
                .find(|c| !is_tls13_suite(*c) && offered(c))
        });
        match pick {
            None => Choice::Refuse,
            Some(code) => match self.real.get(&code) {
                Some(cfg) => Choice::Real(Arc::clone(cfg)),
                None if is_tls13_suite(code) => Choice::Emulate(code, HelloVersion::Tls13),
                None => Choice::Emulate(code, HelloVersion::Legacy),
            },
        }
    }
}
