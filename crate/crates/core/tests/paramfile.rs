use std::path::PathBuf;

use mads_core::blackbox::BuiltinDataset;
use mads_core::hpspace::{Keyword, SpaceSpec};
use mads_core::paramfile::{parse, Dataset, ParseErrorKind, RemainingPolicy};
use proptest::prelude::*;

fn read(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../params")
        .join(name);
    std::fs::read_to_string(path).unwrap()
}

fn summary(c: &mads_core::RunConfig, k: Keyword) -> (f64, f64, f64, bool) {
    let d = c.space.def(k);
    (d.default, d.lower, d.upper, d.fixed)
}

#[test]
fn first_example() {
    let c = parse(&read("mnist_first_example.txt")).unwrap();
    assert_eq!(c.dataset, Dataset::Builtin(BuiltinDataset::Mnist));
    assert_eq!(c.max_bb_eval, 100);
    assert_eq!(c.remaining_hps, RemainingPolicy::Fixed);
    assert_eq!(summary(&c, Keyword::NumConLayers), (5.0, 0.0, 100.0, true));
    assert_eq!(summary(&c, Keyword::Kernels), (3.0, 1.0, 20.0, false));
    assert_eq!(summary(&c, Keyword::NumFcLayers), (6.0, 0.0, 500.0, false));
    assert_eq!(summary(&c, Keyword::ActivationFunction), (2.0, 1.0, 3.0, false));
    assert_eq!(summary(&c, Keyword::DropoutRate), (0.6, 0.3, 0.8, false));
    assert_eq!(summary(&c, Keyword::BatchSize), (128.0, 1.0, 400.0, true));
    let p = c.initial_point();
    assert_eq!((p.n_conv(), p.n_fc()), (5, 6));
    assert!(p.conv.iter().all(|l| l.kernel == 3));
}

#[test]
fn fully_connected_example() {
    let c = parse(&read("mnist_fc_optim.txt")).unwrap();
    assert_eq!(c.max_bb_eval, 150);
    assert_eq!(summary(&c, Keyword::NumFcLayers), (10.0, 0.0, 500.0, false));
    assert_eq!(summary(&c, Keyword::SizeFcLayer), (500.0, 1.0, 2000.0, false));
    for k in Keyword::ALL {
        if k != Keyword::NumFcLayers && k != Keyword::SizeFcLayer {
            assert!(c.space.def(k).fixed, "{k}");
        }
    }
    assert_eq!(c.initial_point().fc, vec![500; 10]);
}

#[test]
fn default_example() {
    let c = parse(&read("cifar10_default.txt")).unwrap();
    assert_eq!(c.dataset, Dataset::Builtin(BuiltinDataset::Cifar10));
    assert_eq!(c.max_bb_eval, 100);
    assert_eq!(c.remaining_hps, RemainingPolicy::Var);
    let reference = SpaceSpec::new(c.space.input_image_size, 1);
    assert_eq!(c.space, reference);
    assert_eq!(c.initial_point().dimension(), 22);
}

#[test]
fn every_error_is_reported() {
    let text = "\
MAX_BB_EVAL 10
NUM_CON_LAYERS 3
NUM_CON_LAYERS 4
KERNELS abc
STRIDES 1.5
DROPOUT_RATE 0.9 0.8 0.3
BATCH_SIZE 500
LEARNING_RATE 0.1
PADDINGS 1 0 2 VAR 3
DO_POOLS 0 0 2
";
    let errors = parse(text).unwrap_err().0;
    let kinds: Vec<(Option<usize>, &ParseErrorKind)> = errors.iter().map(|e| (e.line, &e.kind)).collect();
    let expect = |line: Option<usize>, check: fn(&ParseErrorKind) -> bool| {
        assert!(
            kinds.iter().any(|(l, k)| *l == line && check(k)),
            "missing error on {line:?}: {kinds:#?}"
        );
    };
    expect(Some(3), |k| {
        matches!(k, ParseErrorKind::Duplicate { first_line: 2, .. })
    });
    expect(Some(4), |k| matches!(k, ParseErrorKind::NotANumber { .. }));
    expect(Some(5), |k| matches!(k, ParseErrorKind::NotAnInteger { .. }));
    expect(Some(6), |k| matches!(k, ParseErrorKind::BoundsReversed { .. }));
    expect(Some(7), |k| matches!(k, ParseErrorKind::InitialOutOfBounds { .. }));
    expect(Some(8), |k| matches!(k, ParseErrorKind::UnknownKeyword(_)));
    expect(Some(9), |k| matches!(k, ParseErrorKind::TooManyValues { .. }));
    expect(Some(10), |k| matches!(k, ParseErrorKind::OutsideDomain { .. }));
    expect(None, |k| matches!(k, ParseErrorKind::MissingMandatory("DATASET")));
    assert_eq!(errors.len(), 9);
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let c = parse("# header\n\n   \nDATASET SPHERE # analytic\n\tMAX_BB_EVAL\t5\n").unwrap();
    assert_eq!(c.max_bb_eval, 5);
}

#[test]
fn extension_keywords() {
    let c = parse("DATASET TOYMNIST\nMAX_BB_EVAL 5\nSEED 12\nOUTPUT_DIR runs/a b\nMAX_EPOCHS 20\nPARALLEL_EVAL 3\n")
        .unwrap();
    assert_eq!(c.seed, 12);
    assert_eq!(c.output_dir, PathBuf::from("runs/a b"));
    assert_eq!((c.max_epochs, c.parallel_eval), (20, 3));
    assert_eq!(c.engine_options().parallel_batch, 3);
}

fn keyword_line() -> impl Strategy<Value = (Keyword, String)> {
    (0..Keyword::ALL.len(), any::<u8>(), prop::bool::ANY).prop_map(|(i, r, fixed)| {
        let k = Keyword::ALL[i];
        let (_, lo, hi) = k.table_default();
        let t = r as f64 / 255.0;
        let mut init = lo + t * (hi - lo);
        if k.kind().is_integral() {
            init = init.round();
        }
        let flag = if fixed { "FIXED" } else { "VAR" };
        (k, format!("{k} {init} - - {flag}"))
    })
}

proptest! {
    #[test]
    fn serialization_round_trips(
        lines in prop::collection::vec(keyword_line(), 0..10),
        remaining in prop::bool::ANY,
        seed in 0u64..1000,
    ) {
        let mut text = format!("DATASET QUADRATIC\nMAX_BB_EVAL 17\nSEED {seed}\n");
        let mut used = Vec::new();
        for (k, line) in lines {
            if !used.contains(&k) {
                used.push(k);
                text.push_str(&line);
                text.push('\n');
            }
        }
        if remaining {
            text.push_str("REMAINING_HPS FIXED\n");
        }
        let c = parse(&text).unwrap();
        let again = parse(&c.serialize()).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.serialize(), c.serialize());

        // Untouched keywords keep the reference values bit for bit.
        for k in Keyword::ALL {
            if !used.contains(&k) {
                let (d, lo, hi) = k.table_default();
                let def = c.space.def(k);
                prop_assert_eq!((def.default.to_bits(), def.lower.to_bits(), def.upper.to_bits()), (d.to_bits(), lo.to_bits(), hi.to_bits()));
                prop_assert_eq!(def.fixed, remaining);
            }
        }
    }
}
