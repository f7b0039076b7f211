use proptest::prelude::*;
use rcuguard::{check_program, parse, pretty, CheckOptions};

fn corpus_sources() -> Vec<(String, String)> {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus");
    let mut out = Vec::new();
    for dir in ["pos", "neg"] {
        for e in std::fs::read_dir(format!("{root}/{dir}")).unwrap() {
            let path = e.unwrap().path();
            out.push((path.display().to_string(), std::fs::read_to_string(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn corpus_round_trips() {
    let srcs = corpus_sources();
    assert_eq!(srcs.len(), 13);
    for (name, src) in srcs {
        let p = parse(&src).unwrap_or_else(|e| panic!("{name}: {e:?}"));
        let text = pretty(&p);
        let q = parse(&text).unwrap_or_else(|e| panic!("{name} reprinted: {e:?}\n{text}"));
        assert_eq!(p, q, "{name}");
        assert_eq!(pretty(&q), text, "{name}");
        let opts = CheckOptions::default();
        assert_eq!(check_program(&p, &opts).ok(), check_program(&q, &opts).ok(), "{name}");
    }
}

#[test]
fn parse_errors_carry_positions() {
    let errs = parse("fields { Next: rcu }\nroot h;\nwriter w { rcu_write { x = ; } }").unwrap_err();
    assert!(!errs.is_empty());
    assert!(errs[0].to_string().contains("3:"), "{}", errs[0]);
    assert!(parse("fields { Next: bogus }\nroot h;").is_err());
}

const VARS: [&str; 3] = ["a", "b", "c"];

fn stmt() -> impl Strategy<Value = String> {
    let v = || proptest::sample::select(VARS.to_vec());
    prop_oneof![
        v().prop_map(|x| format!("{x} = h;")),
        (v(), v()).prop_map(|(x, y)| format!("{x} = {y};")),
        (v(), v()).prop_map(|(x, y)| format!("{x} = {y}.Next;")),
        (v(), v()).prop_map(|(x, y)| format!("{x}.Next = {y};")),
        v().prop_map(|x| format!("{x}.Next = null;")),
        v().prop_map(|x| format!("{x} = new;")),
        v().prop_map(|x| format!("free({x});")),
        Just("sync_start; sync_stop;".to_string()),
        Just("skip;".to_string()),
        (v(), v()).prop_map(|(x, y)| format!("if ({x}.Next == {y}) {{ skip; }} else {{ {y} = {x}; }}")),
        v().prop_map(|x| format!("while ({x}.Next != null) {{ {x} = {x}.Next; }}")),
        v().prop_map(|x| format!("n = {x}.data;")),
    ]
}

proptest! {
    #[test]
    fn generated_programs_round_trip(body in proptest::collection::vec(stmt(), 1..8)) {
        let src = format!(
            "fields {{ Next: rcu, data: normal }}\nroot h;\nwriter w {{ rcu_write {{ {} }} }}",
            body.join(" ")
        );
        let p = parse(&src).unwrap();
        let text = pretty(&p);
        prop_assert_eq!(&parse(&text).unwrap(), &p);
        prop_assert_eq!(pretty(&parse(&text).unwrap()), text);
    }
}
