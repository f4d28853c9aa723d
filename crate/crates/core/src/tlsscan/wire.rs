//! Just enough of the TLS handshake wire format to negotiate a cipher suite:
//! ClientHello construction and parsing, ServerHello construction and parsing.

use rand::RngCore;

/// OpenSSL-style suite names and their IANA code points.
pub const KNOWN_SUITES: &[(&str, u16)] = &[
    ("TLS_AES_128_GCM_SHA256", 0x1301),
    ("TLS_AES_256_GCM_SHA384", 0x1302),
    ("TLS_CHACHA20_POLY1305_SHA256", 0x1303),
    ("TLS_AES_128_CCM_SHA256", 0x1304),
    ("TLS_AES_128_CCM_8_SHA256", 0x1305),
    ("ECDHE-ECDSA-AES256-GCM-SHA384", 0xC02C),
    ("ECDHE-RSA-AES256-GCM-SHA384", 0xC030),
    ("ECDHE-ECDSA-CHACHA20-POLY1305", 0xCCA9),
    ("ECDHE-RSA-CHACHA20-POLY1305", 0xCCA8),
    ("ECDHE-ECDSA-AES128-GCM-SHA256", 0xC02B),
    ("ECDHE-RSA-AES128-GCM-SHA256", 0xC02F),
    ("ECDHE-ECDSA-AES256-SHA384", 0xC024),
    ("ECDHE-RSA-AES256-SHA384", 0xC028),
    ("ECDHE-ECDSA-AES128-SHA256", 0xC023),
    ("ECDHE-RSA-AES128-SHA256", 0xC027),
    ("ECDHE-ECDSA-AES256-SHA", 0xC00A),
    ("ECDHE-RSA-AES256-SHA", 0xC014),
    ("ECDHE-ECDSA-AES128-SHA", 0xC009),
    ("ECDHE-RSA-AES128-SHA", 0xC013),
    ("ECDHE-ECDSA-CAMELLIA256-SHA384", 0xC073),
    ("ECDHE-RSA-CAMELLIA256-SHA384", 0xC077),
    ("ECDHE-ECDSA-CAMELLIA128-SHA256", 0xC072),
    ("ECDHE-RSA-CAMELLIA128-SHA256", 0xC076),
    ("ECDHE-ECDSA-DES-CBC3-SHA", 0xC008),
    ("ECDHE-RSA-DES-CBC3-SHA", 0xC012),
    ("ECDHE-ECDSA-RC4-SHA", 0xC007),
    ("ECDHE-RSA-RC4-SHA", 0xC011),
    ("ECDHE-ECDSA-NULL-SHA", 0xC006),
    ("ECDHE-RSA-NULL-SHA", 0xC010),
    ("DHE-RSA-AES256-GCM-SHA384", 0x009F),
    ("DHE-DSS-AES256-GCM-SHA384", 0x00A3),
    ("DHE-RSA-CHACHA20-POLY1305", 0xCCAA),
    ("DHE-RSA-AES128-GCM-SHA256", 0x009E),
    ("DHE-DSS-AES128-GCM-SHA256", 0x00A2),
    ("DHE-RSA-AES256-SHA256", 0x006B),
    ("DHE-DSS-AES256-SHA256", 0x006A),
    ("DHE-RSA-AES128-SHA256", 0x0067),
    ("DHE-DSS-AES128-SHA256", 0x0040),
    ("DHE-RSA-AES256-SHA", 0x0039),
    ("DHE-DSS-AES256-SHA", 0x0038),
    ("DHE-RSA-AES128-SHA", 0x0033),
    ("DHE-DSS-AES128-SHA", 0x0032),
    ("DHE-RSA-CAMELLIA256-SHA", 0x0088),
    ("DHE-DSS-CAMELLIA256-SHA", 0x0087),
    ("DHE-RSA-CAMELLIA128-SHA", 0x0045),
    ("DHE-DSS-CAMELLIA128-SHA", 0x0044),
    ("DHE-RSA-SEED-SHA", 0x009A),
    ("DHE-DSS-SEED-SHA", 0x0099),
    ("EDH-RSA-DES-CBC3-SHA", 0x0016),
    ("EDH-DSS-DES-CBC3-SHA", 0x0013),
    ("EDH-RSA-DES-CBC-SHA", 0x0015),
    ("EDH-DSS-DES-CBC-SHA", 0x0012),
    ("EXP-EDH-RSA-DES-CBC-SHA", 0x0014),
    ("EXP-EDH-DSS-DES-CBC-SHA", 0x0011),
    ("AES256-GCM-SHA384", 0x009D),
    ("AES128-GCM-SHA256", 0x009C),
    ("AES256-SHA256", 0x003D),
    ("AES128-SHA256", 0x003C),
    ("AES256-SHA", 0x0035),
    ("AES128-SHA", 0x002F),
    ("CAMELLIA256-SHA", 0x0084),
    ("CAMELLIA128-SHA", 0x0041),
    ("SEED-SHA", 0x0096),
    ("IDEA-CBC-SHA", 0x0007),
    ("DES-CBC3-SHA", 0x000A),
    ("DES-CBC-SHA", 0x0009),
    ("RC4-SHA", 0x0005),
    ("RC4-MD5", 0x0004),
    ("NULL-SHA256", 0x003B),
    ("NULL-SHA", 0x0002),
    ("NULL-MD5", 0x0001),
    ("EXP-DES-CBC-SHA", 0x0008),
    ("EXP-RC2-CBC-MD5", 0x0006),
    ("EXP-RC4-MD5", 0x0003),
    ("ECDH-ECDSA-AES256-GCM-SHA384", 0xC02E),
    ("ECDH-RSA-AES256-GCM-SHA384", 0xC032),
    ("ECDH-ECDSA-AES128-GCM-SHA256", 0xC02D),
    ("ECDH-RSA-AES128-GCM-SHA256", 0xC031),
    ("ECDH-ECDSA-AES256-SHA384", 0xC026),
    ("ECDH-RSA-AES256-SHA384", 0xC02A),
    ("ECDH-ECDSA-AES128-SHA256", 0xC025),
    ("ECDH-RSA-AES128-SHA256", 0xC029),
    ("ECDH-ECDSA-AES256-SHA", 0xC005),
    ("ECDH-RSA-AES256-SHA", 0xC00F),
    ("ECDH-ECDSA-AES128-SHA", 0xC004),
    ("ECDH-RSA-AES128-SHA", 0xC00E),
    ("ECDH-ECDSA-DES-CBC3-SHA", 0xC003),
    ("ECDH-RSA-DES-CBC3-SHA", 0xC00D),
    ("ECDH-ECDSA-RC4-SHA", 0xC002),
    ("ECDH-RSA-RC4-SHA", 0xC00C),
    ("DH-RSA-AES256-SHA", 0x0037),
    ("DH-DSS-AES256-SHA", 0x0036),
    ("DH-RSA-AES128-SHA", 0x0031),
    ("DH-DSS-AES128-SHA", 0x0030),
];

pub fn suite_code(name: &str) -> Option<u16> {
    KNOWN_SUITES.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

pub fn suite_name(code: u16) -> Option<&'static str> {
    KNOWN_SUITES.iter().find(|(_, c)| *c == code).map(|(n, _)| *n)
}

/// TLS 1.3 suites occupy 0x13xx.
pub fn is_tls13_suite(code: u16) -> bool {
    code >> 8 == 0x13
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HelloVersion {
    /// Offers TLS 1.2 and lets the server pick anything down to TLS 1.0.
    Legacy,
    Tls13,
}

const HANDSHAKE: u8 = 22;
const ALERT: u8 = 21;
const CLIENT_HELLO: u8 = 1;
const SERVER_HELLO: u8 = 2;

const EXT_SERVER_NAME: u16 = 0x0000;
const EXT_SUPPORTED_GROUPS: u16 = 0x000a;
const EXT_EC_POINT_FORMATS: u16 = 0x000b;
const EXT_SIGNATURE_ALGORITHMS: u16 = 0x000d;
const EXT_EXTENDED_MASTER_SECRET: u16 = 0x0017;
const EXT_SUPPORTED_VERSIONS: u16 = 0x002b;
const EXT_PSK_MODES: u16 = 0x002d;
const EXT_KEY_SHARE: u16 = 0x0033;
const EXT_RENEGOTIATION_INFO: u16 = 0xff01;
const GROUP_X25519: u16 = 0x001d;

/// A fatal `handshake_failure` alert record.
pub const HANDSHAKE_FAILURE_ALERT: [u8; 7] = [ALERT, 0x03, 0x03, 0x00, 0x02, 0x02, 0x28];

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u24(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_be_bytes()[1..]);
}

fn ext(out: &mut Vec<u8>, kind: u16, body: &[u8]) {
    put_u16(out, kind);
    put_u16(out, body.len() as u16);
    out.extend_from_slice(body);
}

fn random32() -> [u8; 32] {
    let mut r = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut r);
    r
}

fn wrap_handshake(kind: u8, body: &[u8], record_version: u16) -> Vec<u8> {
    let mut hs = Vec::with_capacity(body.len() + 4);
    hs.push(kind);
    put_u24(&mut hs, body.len());
    hs.extend_from_slice(body);
    let mut rec = Vec::with_capacity(hs.len() + 5);
    rec.push(HANDSHAKE);
    put_u16(&mut rec, record_version);
    put_u16(&mut rec, hs.len() as u16);
    rec.extend_from_slice(&hs);
    rec
}

/// A ClientHello record offering exactly `suites`, in that order.
pub fn build_client_hello(suites: &[u16], version: HelloVersion, sni: Option<&str>) -> Vec<u8> {
    let mut body = Vec::with_capacity(512);
    put_u16(&mut body, 0x0303);
    body.extend_from_slice(&random32());
    body.push(32);
    body.extend_from_slice(&random32());
    put_u16(&mut body, (suites.len() * 2) as u16);
    for s in suites {
        put_u16(&mut body, *s);
    }
    body.extend_from_slice(&[1, 0]);

    let mut exts = Vec::with_capacity(256);
    if let Some(name) = sni.filter(|n| n.parse::<std::net::IpAddr>().is_err()) {
        let mut sn = Vec::new();
        put_u16(&mut sn, (name.len() + 3) as u16);
        sn.push(0);
        put_u16(&mut sn, name.len() as u16);
        sn.extend_from_slice(name.as_bytes());
        ext(&mut exts, EXT_SERVER_NAME, &sn);
    }
    let groups: [u16; 5] = [GROUP_X25519, 0x0017, 0x0018, 0x0019, 0x0100];
    let mut g = Vec::new();
    put_u16(&mut g, (groups.len() * 2) as u16);
    groups.iter().for_each(|x| put_u16(&mut g, *x));
    ext(&mut exts, EXT_SUPPORTED_GROUPS, &g);
    ext(&mut exts, EXT_EC_POINT_FORMATS, &[1, 0]);
    let sigs: [u16; 12] = [
        0x0403, 0x0503, 0x0603, 0x0807, 0x0804, 0x0805, 0x0806, 0x0401, 0x0501, 0x0601, 0x0201,
        0x0203,
    ];
    let mut sa = Vec::new();
    put_u16(&mut sa, (sigs.len() * 2) as u16);
    sigs.iter().for_each(|x| put_u16(&mut sa, *x));
    ext(&mut exts, EXT_SIGNATURE_ALGORITHMS, &sa);
    match version {
        HelloVersion::Legacy => {
            ext(&mut exts, EXT_EXTENDED_MASTER_SECRET, &[]);
            ext(&mut exts, EXT_RENEGOTIATION_INFO, &[0]);
        }
        HelloVersion::Tls13 => {
            ext(&mut exts, EXT_SUPPORTED_VERSIONS, &[2, 0x03, 0x04]);
            ext(&mut exts, EXT_PSK_MODES, &[1, 1]);
            let mut ks = Vec::new();
            put_u16(&mut ks, 2 + 2 + 32);
            put_u16(&mut ks, GROUP_X25519);
            put_u16(&mut ks, 32);
            ks.extend_from_slice(&random32());
            ext(&mut exts, EXT_KEY_SHARE, &ks);
        }
    }
    put_u16(&mut body, exts.len() as u16);
    body.extend_from_slice(&exts);
    wrap_handshake(CLIENT_HELLO, &body, 0x0301)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed TLS message: {0}")]
pub struct WireError(pub String);

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn rest(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Handshake bytes reassembled from the records at the front of `buf`.
///
/// Returns the first complete handshake message (type, body) and how many
/// input bytes were consumed, or `Ok(None)` if more input is needed.
/// An alert record yields `Err` with the alert description.
fn first_handshake(buf: &[u8]) -> Result<Option<(u8, Vec<u8>, usize)>, HandshakeStop> {
    let mut hs = Vec::new();
    let mut pos = 0;
    loop {
        if buf.len() - pos < 5 {
            return Ok(None);
        }
        let ctype = buf[pos];
        let len = u16::from_be_bytes([buf[pos + 3], buf[pos + 4]]) as usize;
        if buf.len() - pos - 5 < len {
            return Ok(None);
        }
        let fragment = &buf[pos + 5..pos + 5 + len];
        pos += 5 + len;
        match ctype {
            HANDSHAKE => hs.extend_from_slice(fragment),
            ALERT => {
                return Err(HandshakeStop::Alert(fragment.get(1).copied().unwrap_or(0)));
            }
            other => {
                return Err(HandshakeStop::Malformed(format!(
                    "unexpected record type {other}"
                )))
            }
        }
        if hs.len() >= 4 {
            let mlen = ((hs[1] as usize) << 16) | ((hs[2] as usize) << 8) | hs[3] as usize;
            if hs.len() >= 4 + mlen {
                return Ok(Some((hs[0], hs[4..4 + mlen].to_vec(), pos)));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeStop {
    Alert(u8),
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHelloInfo {
    pub legacy_version: u16,
    pub session_id: Vec<u8>,
    pub suites: Vec<u16>,
    pub supported_versions: Vec<u16>,
    pub server_name: Option<String>,
}

impl ClientHelloInfo {
    pub fn offers_tls13(&self) -> bool {
        self.supported_versions.contains(&0x0304)
    }
}

/// Parses a ClientHello from the start of a connection.
///
/// `Ok(None)`: need more bytes. On success also returns the number of bytes
/// the hello occupied.
pub fn parse_client_hello(buf: &[u8]) -> Result<Option<(ClientHelloInfo, usize)>, WireError> {
    let (kind, body, used) = match first_handshake(buf) {
        Ok(Some(x)) => x,
        Ok(None) => return Ok(None),
        Err(HandshakeStop::Alert(a)) => return Err(WireError(format!("alert {a}"))),
        Err(HandshakeStop::Malformed(m)) => return Err(WireError(m)),
    };
    if kind != CLIENT_HELLO {
        return Err(WireError(format!("expected ClientHello, got type {kind}")));
    }
    let mut c = Cursor::new(&body);
    let legacy_version = c.u16()?;
    c.take(32)?;
    let sid_len = c.u8()? as usize;
    let session_id = c.take(sid_len)?.to_vec();
    let slen = c.u16()? as usize;
    let raw = c.take(slen)?;
    let suites = raw
        .chunks_exact(2)
        .map(|p| u16::from_be_bytes([p[0], p[1]]))
        .collect();
    let clen = c.u8()? as usize;
    c.take(clen)?;
    let mut supported_versions = Vec::new();
    let mut server_name = None;
    if c.rest() >= 2 {
        let elen = c.u16()? as usize;
        let mut e = Cursor::new(c.take(elen)?);
        while e.rest() >= 4 {
            let kind = e.u16()?;
            let len = e.u16()? as usize;
            let data = e.take(len)?;
            match kind {
                EXT_SUPPORTED_VERSIONS => {
                    let mut v = Cursor::new(data);
                    let n = v.u8()? as usize;
                    let list = v.take(n)?;
                    supported_versions = list
                        .chunks_exact(2)
                        .map(|p| u16::from_be_bytes([p[0], p[1]]))
                        .collect();
                }
                EXT_SERVER_NAME => {
                    let mut s = Cursor::new(data);
                    let _list = s.u16()?;
                    if s.u8()? == 0 {
                        let n = s.u16()? as usize;
                        server_name = Some(String::from_utf8_lossy(s.take(n)?).into_owned());
                    }
                }
                _ => {}
            }
        }
    }
    Ok(Some((
        ClientHelloInfo {
            legacy_version,
            session_id,
            suites,
            supported_versions,
            server_name,
        },
        used,
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerHelloInfo {
    /// Negotiated protocol version (supported_versions wins over legacy).
    pub version: u16,
    pub suite: u16,
}

/// Outcome of reading the server's first flight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerReply {
    Hello(ServerHelloInfo),
    Stop(HandshakeStop),
}

/// Parses a ServerHello at the start of `buf`; `Ok(None)` when incomplete.
pub fn parse_server_hello(buf: &[u8]) -> Result<Option<ServerReply>, WireError> {
    let (kind, body, _) = match first_handshake(buf) {
        Ok(Some(x)) => x,
        Ok(None) => return Ok(None),
        Err(stop) => return Ok(Some(ServerReply::Stop(stop))),
    };
    if kind != SERVER_HELLO {
        return Err(WireError(format!("expected ServerHello, got type {kind}")));
    }
    let mut c = Cursor::new(&body);
    let legacy = c.u16()?;
    c.take(32)?;
    let sid_len = c.u8()? as usize;
    c.take(sid_len)?;
    let suite = c.u16()?;
    c.u8()?;
    let mut version = legacy;
    if c.rest() >= 2 {
        let elen = c.u16()? as usize;
        let mut e = Cursor::new(c.take(elen)?);
        while e.rest() >= 4 {
            let kind = e.u16()?;
            let len = e.u16()? as usize;
            let data = e.take(len)?;
            if kind == EXT_SUPPORTED_VERSIONS && data.len() == 2 {
                version = u16::from_be_bytes([data[0], data[1]]);
            }
        }
    }
    Ok(Some(ServerReply::Hello(ServerHelloInfo { version, suite })))
}

/// A ServerHello record selecting `suite`.
pub fn server_hello_bytes(suite: u16, version: HelloVersion, session_id: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(128);
    put_u16(&mut body, 0x0303);
    body.extend_from_slice(&random32());
    body.push(session_id.len() as u8);
    body.extend_from_slice(session_id);
    put_u16(&mut body, suite);
    body.push(0);
    let mut exts = Vec::new();
    match version {
        HelloVersion::Tls13 => {
            ext(&mut exts, EXT_SUPPORTED_VERSIONS, &[0x03, 0x04]);
            let mut ks = Vec::new();
            put_u16(&mut ks, GROUP_X25519);
            put_u16(&mut ks, 32);
            ks.extend_from_slice(&random32());
            ext(&mut exts, EXT_KEY_SHARE, &ks);
        }
        HelloVersion::Legacy => {
            ext(&mut exts, EXT_RENEGOTIATION_INFO, &[0]);
        }
    }
    put_u16(&mut body, exts.len() as u16);
    body.extend_from_slice(&exts);
    wrap_handshake(SERVER_HELLO, &body, 0x0303)
}
