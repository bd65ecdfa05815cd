use std::fs;
use std::path::Path;

use lshpsi::{Error, Result};
use rcgen::{BasicConstraints, CertificateParams, DnType, ExtendedKeyUsagePurpose, IsCa, KeyPair};

fn gen_err(e: rcgen::Error) -> Error {
    Error::Config(format!("certificate generation: {e}"))
}

/// Write `ca.pem` plus `<party>.pem` / `<party>.key` for both parties.
/// Each party certificate is valid for client and server use.
pub fn cmd_certs(out: &Path, hosts: &[String]) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut ca = CertificateParams::new(Vec::<String>::new()).map_err(gen_err)?;
    ca.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
    ca.distinguished_name.push(DnType::CommonName, "lshpsi test CA");
    let ca_key = KeyPair::generate().map_err(gen_err)?;
    let ca_cert = ca.self_signed(&ca_key).map_err(gen_err)?;
    fs::write(out.join("ca.pem"), ca_cert.pem())?;

    for party in ["sender", "receiver"] {
        let mut p = CertificateParams::new(hosts.to_vec()).map_err(gen_err)?;
        p.distinguished_name.push(DnType::CommonName, party);
        p.extended_key_usages = vec![ExtendedKeyUsagePurpose::ServerAuth, ExtendedKeyUsagePurpose::ClientAuth];
        let key = KeyPair::generate().map_err(gen_err)?;
        let cert = p.signed_by(&key, &ca_cert, &ca_key).map_err(gen_err)?;
        fs::write(out.join(format!("{party}.pem")), cert.pem())?;
        fs::write(out.join(format!("{party}.key")), key.serialize_pem())?;
    }
    println!("wrote ca.pem, sender.{{pem,key}}, receiver.{{pem,key}} to {}", out.display());
    Ok(())
}
