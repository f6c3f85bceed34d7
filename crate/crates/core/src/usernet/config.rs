use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

/// `-nic` parse failure naming the offending token.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid -nic token `{token}`: {reason}")]
pub struct NicConfigError {
    pub token: String,
    pub reason: String,
}

fn err(token: &str, reason: impl Into<String>) -> NicConfigError {
    NicConfigError {
        token: token.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proto {
    Tcp,
    Udp,
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proto::Tcp => "tcp",
            Proto::Udp => "udp",
        })
    }
}

/// One `hostfwd=` entry. Empty addresses mean "all host interfaces" and
/// "the first DHCP lease" respectively.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ForwardRule {
    pub proto: Proto,
    pub host_addr: Option<Ipv4Addr>,
    pub host_port: u16,
    pub guest_addr: Option<Ipv4Addr>,
    pub guest_port: u16,
}

impl fmt::Display for ForwardRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let addr = |a: &Option<Ipv4Addr>| a.map(|a| a.to_string()).unwrap_or_default();
        write!(
            f,
            "{}:{}:{}-{}:{}",
            self.proto,
            addr(&self.host_addr),
            self.host_port,
            addr(&self.guest_addr),
            self.guest_port
        )
    }
}

impl ForwardRule {
    pub fn tcp(host_port: u16, guest_port: u16) -> Self {
        Self {
            proto: Proto::Tcp,
            host_addr: None,
            host_port,
            guest_addr: None,
            guest_port,
        }
    }

    /// Parses `PROTO:[HOSTADDR]:HOSTPORT-[GUESTADDR]:GUESTPORT`.
    pub fn parse(rule: &str) -> Result<Self, NicConfigError> {
        let token = format!("hostfwd={rule}");
        let (host, guest) = rule
            .split_once('-')
            .ok_or_else(|| err(&token, "expected HOST-GUEST separated by '-'"))?;
        let mut host_parts = host.splitn(3, ':');
        let (Some(proto), Some(host_addr), Some(host_port)) =
            (host_parts.next(), host_parts.next(), host_parts.next())
        else {
            return Err(err(&token, "expected PROTO:[HOSTADDR]:HOSTPORT"));
        };
        let proto = match proto {
            "tcp" | "" => Proto::Tcp,
            "udp" => Proto::Udp,
            other => return Err(err(&token, format!("unknown protocol `{other}`"))),
        };
        let (guest_addr, guest_port) = guest
            .rsplit_once(':')
            .ok_or_else(|| err(&token, "expected [GUESTADDR]:GUESTPORT"))?;
        Ok(ForwardRule {
            proto,
            host_addr: parse_addr(&token, host_addr)?,
            host_port: parse_port(&token, host_port)?,
            guest_addr: parse_addr(&token, guest_addr)?,
            guest_port: parse_port(&token, guest_port)?,
        })
    }
}

fn parse_addr(token: &str, s: &str) -> Result<Option<Ipv4Addr>, NicConfigError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| err(token, format!("bad address `{s}`")))
}

fn parse_port(token: &str, s: &str) -> Result<u16, NicConfigError> {
    let port: u16 = s
        .parse()
        .map_err(|_| err(token, format!("non-numeric port `{s}`")))?;
    if port == 0 {
        return Err(err(token, "port must be nonzero"));
    }
    Ok(port)
}

pub const SUPPORTED_MODEL: &str = "open_eth";

/// Parsed `-nic user,...` option.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NicConfig {
    pub model: String,
    pub id: String,
    pub forwards: Vec<ForwardRule>,
}

impl Default for NicConfig {
    fn default() -> Self {
        Self {
            model: SUPPORTED_MODEL.into(),
            id: String::new(),
            forwards: Vec::new(),
        }
    }
}

/// Parses the comma-separated `-nic` grammar, e.g.
/// `user,model=open_eth,id=lo0,hostfwd=tcp::8000-:80`.
pub fn parse_nic_config(text: &str) -> Result<NicConfig, NicConfigError> {
    let mut tokens = text.split(',').map(str::trim);
    match tokens.next() {
        Some("user") => {}
        Some(other) => return Err(err(other, "only the `user` network backend is supported")),
        None => return Err(err("", "empty -nic specification")),
    }
    let mut model = None;
    let mut id = String::new();
    let mut forwards = Vec::new();
    for token in tokens {
        if token.is_empty() {
            continue;
        }
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| err(token, "expected key=value"))?;
        match key {
            "model" => {
                if value != SUPPORTED_MODEL {
                    return Err(err(
                        token,
                        format!("unsupported NIC model, expected `{SUPPORTED_MODEL}`"),
                    ));
                }
                model = Some(value.to_string());
            }
            "id" => id = value.to_string(),
            "hostfwd" => forwards.push(ForwardRule::parse(value)?),
            _ => return Err(err(token, "unknown option")),
        }
    }
    let model = model.ok_or_else(|| err(text, "model= is required"))?;
    Ok(NicConfig {
        model,
        id,
        forwards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn launch_command_rule() {
        let c = parse_nic_config("user,model=open_eth,id=lo0,hostfwd=tcp::8000-:80").unwrap();
        assert_eq!(c.model, "open_eth");
        assert_eq!(c.id, "lo0");
        assert_eq!(c.forwards, vec![ForwardRule::tcp(8000, 80)]);
    }

    #[test]
    fn tolerates_spaces_after_commas() {
        let c = parse_nic_config("user,model=open_eth, id=lo0,hostfwd=tcp::8000-:80").unwrap();
        assert_eq!(c.id, "lo0");
    }

    #[test]
    fn optional_forwards_and_accumulation() {
        assert!(parse_nic_config("user,model=open_eth")
            .unwrap()
            .forwards
            .is_empty());
        let c = parse_nic_config(
            "user,model=open_eth,hostfwd=tcp:127.0.0.1:8080-10.0.2.15:80,hostfwd=udp::5353-:53",
        )
        .unwrap();
        assert_eq!(c.forwards.len(), 2);
        assert_eq!(c.forwards[0].host_addr, Some(Ipv4Addr::LOCALHOST));
        assert_eq!(c.forwards[0].guest_addr, Some(Ipv4Addr::new(10, 0, 2, 15)));
        assert_eq!(c.forwards[1].proto, Proto::Udp);
        assert_eq!(c.forwards[0].to_string(), "tcp:127.0.0.1:8080-10.0.2.15:80");
    }

    #[test]
    fn errors_name_the_token() {
        let e = parse_nic_config("user,model=open_eth,hostfwd=tcp::0-:80").unwrap_err();
        assert_eq!(e.token, "hostfwd=tcp::0-:80");
        assert!(e.reason.contains("nonzero"));
        let e = parse_nic_config("user,model=e1000").unwrap_err();
        assert_eq!(e.token, "model=e1000");
        let e = parse_nic_config("user,model=open_eth,hostfwd=tcp::http-:80").unwrap_err();
        assert!(e.reason.contains("non-numeric"));
        assert!(parse_nic_config("user,model=open_eth,hostfwd=tcp::8000").is_err());
        assert!(parse_nic_config("user,model=open_eth,hostfwd=sctp::1-:2").is_err());
        assert!(parse_nic_config("tap,model=open_eth").is_err());
        assert!(parse_nic_config("user,model=open_eth,bogus=1").is_err());
        assert!(parse_nic_config("user").is_err());
    }
}
