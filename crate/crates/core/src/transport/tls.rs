//! Mutually authenticated TLS 1.3 transport.
//!
//! Both parties present a certificate chained to a shared trust root. A
//! handshake failure, including an untrusted or missing peer certificate,
//! surfaces as [`Error::Authentication`].

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName};
use rustls::server::WebPkiClientVerifier;
use rustls::{ClientConfig, ClientConnection, RootCertStore, ServerConfig, ServerConnection, StreamOwned};

use super::FramedStream;
use crate::error::{Error, Result};

pub type TlsServerStream = StreamOwned<ServerConnection, TcpStream>;
pub type TlsClientStream = StreamOwned<ClientConnection, TcpStream>;

pub const ENV_CERT: &str = "LSHPSI_CERT";
pub const ENV_KEY: &str = "LSHPSI_KEY";
pub const ENV_CA: &str = "LSHPSI_CA";

/// Certificate chain, private key and trust roots for one party.
pub struct TlsCredentials {
    pub cert_chain: Vec<CertificateDer<'static>>,
    pub key: PrivateKeyDer<'static>,
    pub roots: Vec<CertificateDer<'static>>,
}

impl Clone for TlsCredentials {
    fn clone(&self) -> Self {
        TlsCredentials { cert_chain: self.cert_chain.clone(), key: self.key.clone_key(), roots: self.roots.clone() }
    }
}

impl TlsCredentials {
    pub fn from_pem(cert_pem: &[u8], key_pem: &[u8], ca_pem: &[u8]) -> Result<Self> {
        fn pem_err(what: &'static str) -> impl Fn(rustls::pki_types::pem::Error) -> Error {
            move |e| Error::Config(format!("{what}: {e}"))
        }
        let cert_chain = CertificateDer::pem_slice_iter(cert_pem)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(pem_err("certificate"))?;
        let key = PrivateKeyDer::from_pem_slice(key_pem).map_err(pem_err("private key"))?;
        let roots = CertificateDer::pem_slice_iter(ca_pem)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(pem_err("trust root"))?;
        if cert_chain.is_empty() || roots.is_empty() {
            return Err(Error::Config("certificate and trust root files must each hold at least one certificate".into()));
        }
        Ok(TlsCredentials { cert_chain, key, roots })
    }

    pub fn from_pem_files(cert: &Path, key: &Path, ca: &Path) -> Result<Self> {
        let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())));
        Self::from_pem(&read(cert)?, &read(key)?, &read(ca)?)
    }

    /// Paths from `LSHPSI_CERT`, `LSHPSI_KEY` and `LSHPSI_CA` take precedence
    /// over the ones given.
    pub fn from_env_or(cert: Option<&Path>, key: Option<&Path>, ca: Option<&Path>) -> Result<Self> {
        let pick = |var: &str, fallback: Option<&Path>| -> Result<std::path::PathBuf> {
            std::env::var_os(var)
                .map(Into::into)
                .or_else(|| fallback.map(Path::to_path_buf))
                .ok_or_else(|| Error::Config(format!("no path given and {var} is unset")))
        };
        Self::from_pem_files(&pick(ENV_CERT, cert)?, &pick(ENV_KEY, key)?, &pick(ENV_CA, ca)?)
    }

    fn root_store(&self) -> Result<RootCertStore> {
        let mut store = RootCertStore::empty();
        for root in &self.roots {
            store.add(root.clone()).map_err(|e| Error::Config(format!("trust root: {e}")))?;
        }
        Ok(store)
    }

    pub fn server_config(&self) -> Result<Arc<ServerConfig>> {
        let provider = Arc::new(rustls::crypto::ring::default_provider());
        let verifier = WebPkiClientVerifier::builder_with_provider(Arc::new(self.root_store()?), provider.clone())
            .build()
            .map_err(|e| Error::Config(format!("client verifier: {e}")))?;
        let cfg = ServerConfig::builder_with_provider(provider)
            .with_protocol_versions(&[&rustls::version::TLS13])?
            .with_client_cert_verifier(verifier)
            .with_single_cert(self.cert_chain.clone(), self.key.clone_key())?;
        Ok(Arc::new(cfg))
    }

    pub fn client_config(&self) -> Result<Arc<ClientConfig>> {
        let provider = Arc::new(rustls::crypto::ring::default_provider());
        let cfg = ClientConfig::builder_with_provider(provider)
            .with_protocol_versions(&[&rustls::version::TLS13])?
            .with_root_certificates(self.root_store()?)
            .with_client_auth_cert(self.cert_chain.clone(), self.key.clone_key())?;
        Ok(Arc::new(cfg))
    }
}

fn drive_handshake<C, S>(conn: &mut C, tcp: &mut TcpStream) -> Result<()>
where
    C: std::ops::DerefMut<Target = rustls::ConnectionCommon<S>>,
    S: rustls::SideData,
{
    while conn.is_handshaking() {
        conn.complete_io(tcp).map_err(|e| match Error::from_stream(e) {
            Error::MalformedMessage(m) => Error::Authentication(m),
            other => other,
        })?;
    }
    // Flush any post-handshake records (session tickets, client Finished).
    while conn.wants_write() {
        conn.write_tls(tcp).map_err(Error::from_stream)?;
    }
    Ok(())
}

/// Accept one TLS connection and complete the handshake.
pub fn accept(listener: &TcpListener, creds: &TlsCredentials, timeout: Option<Duration>) -> Result<FramedStream<TlsServerStream>> {
    let (mut tcp, _) = listener.accept()?;
    tcp.set_read_timeout(timeout)?;
    tcp.set_nodelay(true)?;
    let mut conn = ServerConnection::new(creds.server_config()?)?;
    drive_handshake(&mut conn, &mut tcp)?;
    Ok(FramedStream::new(StreamOwned::new(conn, tcp)))
}

/// Connect to `addr`, verifying the server certificate against `server_name`.
pub fn connect<A: ToSocketAddrs>(
    addr: A,
    server_name: &str,
    creds: &TlsCredentials,
    timeout: Option<Duration>,
) -> Result<FramedStream<TlsClientStream>> {
    let mut tcp = TcpStream::connect(addr).map_err(|e| Error::ConnectionLost(e.to_string()))?;
    tcp.set_read_timeout(timeout)?;
    tcp.set_nodelay(true)?;
    let name = ServerName::try_from(server_name.to_owned()).map_err(|e| Error::Config(format!("server name: {e}")))?;
    let mut conn = ClientConnection::new(creds.client_config()?, name)?;
    drive_handshake(&mut conn, &mut tcp)?;
    Ok(FramedStream::new(StreamOwned::new(conn, tcp)))
}

/// Shut the TLS session down cleanly.
pub fn close<C, S>(stream: &mut StreamOwned<C, TcpStream>)
where
    C: std::ops::DerefMut<Target = rustls::ConnectionCommon<S>>,
    S: rustls::SideData,
{
    stream.conn.send_close_notify();
    let _ = stream.flush();
    let mut sink = [0u8; 64];
    let _ = stream.sock.set_read_timeout(Some(Duration::from_millis(200)));
    let _ = stream.read(&mut sink);
}
