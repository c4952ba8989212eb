use xtsformer::events::{
    generate_hawkes, generate_multiscale, load_sequences, write_sequences, Format, HawkesConfig, LoadOptions,
    MultiscaleConfig,
};

/// Kolmogorov-Smirnov statistic of `xs` against the Exponential(rate) CDF.
fn ks_exponential(xs: &mut [f64], rate: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-rate * x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn poisson_gaps_pass_ks() {
    let rate = 2.0;
    let seqs = generate_hawkes(&HawkesConfig {
        num_seqs: 400,
        horizon: 15.0,
        base_rate: rate,
        excitation: 0.0,
        decay: 1.0,
        num_types: 2,
        seed: 21,
    })
    .unwrap();
    let mut gaps: Vec<f64> = seqs
        .iter()
        .flat_map(|s| s.times.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
        .take(10_000)
        .collect();
    assert_eq!(gaps.len(), 10_000);
    let d = ks_exponential(&mut gaps, rate);
    // critical value at the 1% level
    assert!(d < 1.628 / (gaps.len() as f64).sqrt(), "D = {d}");
}

#[test]
fn ks_detects_wrong_rate() {
    let seqs = generate_hawkes(&HawkesConfig {
        num_seqs: 400,
        horizon: 15.0,
        base_rate: 2.0,
        excitation: 0.0,
        decay: 1.0,
        num_types: 2,
        seed: 21,
    })
    .unwrap();
    let mut gaps: Vec<f64> = seqs
        .iter()
        .flat_map(|s| s.times.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
        .take(10_000)
        .collect();
    assert!(ks_exponential(&mut gaps, 2.2) > 1.628 / 100.0);
}

#[test]
fn generated_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = generate_multiscale(&MultiscaleConfig {
        num_seqs: 20,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    for (name, format) in [("e.csv", Format::Csv), ("e.jsonl", Format::Jsonl)] {
        let path = dir.path().join(name);
        write_sequences(&path, format, &seqs).unwrap();
        let back = load_sequences(
            &path,
            format,
            &LoadOptions {
                num_types: Some(seqs[0].num_types),
                vocab: None,
            },
        )
        .unwrap();
        assert_eq!(back, seqs);
    }
}

#[test]
fn multiscale_types_follow_scale() {
    let cfg = MultiscaleConfig {
        num_seqs: 50,
        type_noise: 0.0,
        seed: 8,
        ..Default::default()
    };
    let (boundary, within) = cfg.type_sets();
    for s in generate_multiscale(&cfg).unwrap() {
        for (i, &k) in s.types.iter().enumerate() {
            if i % cfg.burst_size == 0 {
                assert!(boundary.contains(&k));
            } else {
                assert!(within.contains(&k));
            }
        }
    }
}
