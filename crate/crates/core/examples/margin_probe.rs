// Scratch diagnostic: transfer statistics over SUCCESSFUL attack records
// only — decode each stored adversarial WAV at all three precisions and
// report per-precision target-WER/SER plus the uniform-precision random
// break rate.
use quaver_core::{attacks, metrics, model, PrecisionMode};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let root = std::path::Path::new(args.get(1).map(String::as_str).unwrap_or("/root/pilot/full"));
    let kind = args.get(2).map(String::as_str).unwrap_or("cw");
    let params = model::load_params(&root.join("data/model.json")).unwrap();
    let fe = model::FrontEndConfig::default();
    let dir = root.join(format!("data/records/{kind}"));

    let mut ids: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            name.strip_suffix(".json").map(str::to_string)
        })
        .collect();
    ids.sort();

    let mut n_total = 0usize;
    let mut n_success = 0usize;
    // Per mode: (sum target-WER, #records not decoding target) over successes.
    let mut wer_sum = [0.0f64; 3];
    let mut breaks = [0usize; 3];
    for id in &ids {
        let (audio, sidecar) = attacks::load_record_audio(&dir, id).unwrap();
        n_total += 1;
        if !sidecar.success_at_source {
            continue;
        }
        n_success += 1;
        for (i, p) in PrecisionMode::ALL.iter().enumerate() {
            let hyp = model::transcribe(&params, &audio, &fe, *p)
                .map(|t| t)
                .unwrap_or_default();
            wer_sum[i] += metrics::wer(&hyp, &sidecar.target);
            breaks[i] += usize::from(hyp != sidecar.target);
        }
    }
    println!("records {n_total}, successful {n_success}");
    let mut rand_ser = 0.0f64;
    for (i, p) in PrecisionMode::ALL.iter().enumerate() {
        let wer = wer_sum[i] / n_success.max(1) as f64;
        let ser = breaks[i] as f64 / n_success.max(1) as f64;
        rand_ser += ser / 3.0;
        println!("{p}: target-WER {:.4}, target-SER {:.4}", wer, ser);
    }
    println!("uniform-random expected target-SER {rand_ser:.4}");
}
