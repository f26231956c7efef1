//! GCC-style `-f` pass flags. clap has no notion of single-dash long
//! options, so these are pulled out of argv before clap sees it.

use blocklab::passes::PassConfig;

pub const NAMES: [&str; 6] = [
    "tailcalls",
    "tailrec",
    "stack-protector",
    "stack-protector-all",
    "retaddr-pac",
    "retaa",
];

fn slot<'a>(cfg: &'a mut PassConfig, name: &str) -> Option<&'a mut bool> {
    Some(match name {
        "tailcalls" => &mut cfg.ftailcalls,
        "tailrec" => &mut cfg.ftailrec,
        "stack-protector" => &mut cfg.fstack_protector,
        "stack-protector-all" => &mut cfg.fstack_protector_all,
        "retaddr-pac" => &mut cfg.fretaddr_pac,
        "retaa" => &mut cfg.fretaa,
        _ => return None,
    })
}

#[derive(Debug, PartialEq, Eq)]
pub struct Extracted {
    pub cfg: PassConfig,
    pub rest: Vec<String>,
    /// Whether any `-f` flag appeared at all.
    pub any: bool,
}

/// Applies `-fX` / `-fno-X` in order, so the last occurrence wins.
pub fn extract(args: &[String]) -> Result<Extracted, String> {
    let mut cfg = PassConfig::default();
    let mut rest = Vec::new();
    let mut any = false;
    for a in args {
        let Some(body) = a.strip_prefix("-f") else {
            rest.push(a.clone());
            continue;
        };
        let (name, on) = match body.strip_prefix("no-") {
            Some(n) => (n, false),
            None => (body, true),
        };
        match slot(&mut cfg, name) {
            Some(b) => *b = on,
            None => {
                return Err(format!(
                    "unknown flag `{a}`; known: -f{}",
                    NAMES.join(", -f")
                ))
            }
        }
        any = true;
    }
    Ok(Extracted { cfg, rest, any })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(args: &[&str]) -> Result<Extracted, String> {
        extract(&args.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    #[test]
    fn later_flags_win() {
        let e = ex(&["run", "-ftailcalls", "x.rtl", "-fno-tailcalls", "-fretaa"]).unwrap();
        assert!(!e.cfg.ftailcalls);
        assert!(e.cfg.fretaa);
        assert_eq!(e.rest, vec!["run", "x.rtl"]);
        assert!(e.any);
    }

    #[test]
    fn every_flag_maps_to_one_field() {
        for n in NAMES {
            let on = ex(&[&format!("-f{n}")]).unwrap().cfg;
            let fields = [
                on.ftailcalls,
                on.ftailrec,
                on.fstack_protector,
                on.fstack_protector_all,
                on.fretaddr_pac,
                on.fretaa,
            ];
            assert_eq!(fields.iter().filter(|b| **b).count(), 1, "{n}");
            assert_eq!(
                ex(&[&format!("-f{n}"), &format!("-fno-{n}")]).unwrap().cfg,
                PassConfig::default()
            );
        }
    }

    #[test]
    fn unknown_flags_are_errors() {
        assert!(ex(&["-finline"]).is_err());
        assert!(ex(&["-fno-"]).is_err());
        assert_eq!(ex(&["--fuel", "-5"]).unwrap().rest.len(), 2);
    }
}
