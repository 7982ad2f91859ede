use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use msnet_core::dataio::{
    gen_synthetic, load_dataset, planted_baseline_accuracy, read_dataset_header, read_sequences,
    save_dataset, sequences_from_bytes, sequences_to_dataset, split_indices, SpdDataset, SplitRule,
    SynthParams, DATASET_MAGIC, SEQUENCE_MAGIC,
};
use msnet_core::network::{
    evaluate_with, load_checkpoint, save_checkpoint, thread_pool, Checkpoint, MsNetModel, Trainer,
    Variant, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
use msnet_core::verify::{
    gradcheck_layer, gradcheck_network, tiny_config, tiny_config_d3, validate_oracle,
    GradCheckReport, LayerCheck, LayerKind, NetworkCheck,
};

use crate::run_config::RunConfig;
use crate::{
    CmdResult, EvalArgs, Failure, GradcheckArgs, InspectArgs, PreprocessArgs, SynthArgs, TrainArgs,
};

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,wall_seconds";

fn io_usage(what: &str, path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{what} {}: {e}", path.display()))
}

fn load_data(path: &Path) -> Result<SpdDataset, Failure> {
    load_dataset(path).map_err(|e| io_usage("cannot load dataset", path, e))
}

fn check_dataset(model_dim: usize, classes: usize, ds: &SpdDataset) -> CmdResult {
    if ds.dim != model_dim {
        return Err(Failure::Usage(format!(
            "dataset matrices are {0}x{0}, model expects {1}x{1}",
            ds.dim, model_dim
        )));
    }
    if ds.class_count > classes {
        return Err(Failure::Usage(format!(
            "dataset has {} classes, model has {classes}",
            ds.class_count
        )));
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> CmdResult {
    let run = RunConfig::resolve(&args)?;
    // Everything is validated before the first output is created.
    let data = load_data(&run.data)?;
    if data.is_empty() {
        return Err(Failure::Usage(format!(
            "dataset {} is empty",
            run.data.display()
        )));
    }
    check_dataset(run.model.input_dim(), run.model.num_classes, &data)?;
    println!("{}", run.model.echo());

    let resuming = run.resume.is_some();
    let trainer = match run.resume {
        Some(ckpt) => Trainer::from_checkpoint(ckpt),
        None => Trainer::new(MsNetModel::build(&run.model)?),
    };
    let mut trainer = trainer.with_threads(run.threads)?;

    fs::create_dir_all(&run.out_dir).map_err(|e| io_usage("cannot create", &run.out_dir, e))?;
    let metrics_path = run.out_dir.join("metrics.csv");
    let ckpt_path = run.out_dir.join("model.msnc");
    let append = resuming && metrics_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&metrics_path)
        .map_err(|e| io_usage("cannot open", &metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    if !append {
        writeln!(metrics, "{METRICS_HEADER}")
            .map_err(|e| io_usage("cannot write", &metrics_path, e))?;
    }

    let start = Instant::now();
    let every = run.checkpoint_every;
    let result = trainer.train(&data, |t, rec| {
        writeln!(
            metrics,
            "{},{},{},{:.4},{:.3}",
            rec.epoch,
            rec.lr,
            rec.train_loss,
            rec.train_acc,
            start.elapsed().as_secs_f64()
        )?;
        metrics.flush()?;
        if every > 0 && t.epoch % every == 0 {
            save_checkpoint(&t.checkpoint(), &ckpt_path)?;
        }
        Ok(())
    });
    metrics
        .flush()
        .map_err(|e| io_usage("cannot write", &metrics_path, e))?;
    result?;
    save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
    if let Some(last) = trainer.history().last() {
        println!(
            "epoch {}: loss {:.6} train_acc {:.4}",
            last.epoch, last.train_loss, last.train_acc
        );
    }
    println!(
        "checkpoint: {}\nmetrics: {}",
        ckpt_path.display(),
        metrics_path.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let ckpt = load_checkpoint(&args.checkpoint)
        .map_err(|e| io_usage("cannot load checkpoint", &args.checkpoint, e))?;
    let data = load_data(&args.data)?;
    if data.is_empty() {
        return Err(Failure::Usage(format!(
            "dataset {} is empty",
            args.data.display()
        )));
    }
    let model = ckpt.model;
    check_dataset(model.config.input_dim(), model.config.num_classes, &data)?;
    let pool = if args.threads.threads > 1 {
        Some(thread_pool(args.threads.threads)?)
    } else {
        None
    };
    let ev = evaluate_with(&model, &data, pool.as_ref())?;
    println!("accuracy: {:.4} ({}/{})", ev.accuracy, ev.correct, ev.total);
    for (c, row) in ev.confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total > 0 {
            println!("class {c}: {}/{total} correct", row[c]);
        }
    }
    if let Some(path) = &args.confusion {
        let mut out = String::from("true");
        for p in 0..ev.confusion.len() {
            out.push_str(&format!(",pred_{p}"));
        }
        out.push('\n');
        for (c, row) in ev.confusion.iter().enumerate() {
            out.push_str(&c.to_string());
            for n in row {
                out.push_str(&format!(",{n}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| io_usage("cannot write", path, e))?;
    }
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let oracle = validate_oracle(0, args.h)?;
    println!(
        "oracle: trace max_abs {:.3e}, log-det max_rel {:.3e}: {}",
        oracle.trace_abs,
        oracle.logdet_rel,
        if oracle.pass { "ok" } else { "FAIL" }
    );
    if !oracle.pass {
        return Err(Failure::Check(
            "finite-difference oracle failed its closed-form checks".into(),
        ));
    }

    let scope = args.scope.to_ascii_lowercase();
    let first = args.first_seed;
    let seeds = |default: u64| (first..first + args.seeds.unwrap_or(default)).collect::<Vec<u64>>();
    let reports: Vec<GradCheckReport> = if scope == "network" {
        let variant: Variant = args.variant.parse()?;
        let config = if args.d3 {
            tiny_config_d3(variant)
        } else {
            tiny_config(variant)
        };
        let check = NetworkCheck {
            seeds: seeds(5),
            tol: args.tol.unwrap_or(1e-4),
            batch: args.batch,
            h: args.h,
            planted_bug: args.planted_bug,
            ..NetworkCheck::new(config)
        };
        vec![gradcheck_network(&check)?]
    } else {
        let kinds: Vec<LayerKind> = if scope == "layers" || scope == "all" {
            LayerKind::ALL.to_vec()
        } else {
            vec![scope.parse()?]
        };
        let mut out = Vec::new();
        for kind in kinds {
            let mut check = LayerCheck::new(kind);
            check.seeds = seeds(20);
            check.eps = args.eps;
            check.h = args.h;
            if let Some(t) = args.tol {
                check.tol = t;
            }
            if let Some(d) = &args.dims {
                check.dims = d.clone();
            }
            out.push(gradcheck_layer(&check)?);
        }
        out
    };

    for r in &reports {
        print!("{r}");
    }
    if let Some(path) = &args.csv {
        let mut text = format!("{}\n", GradCheckReport::csv_header());
        for r in &reports {
            for row in r.csv_rows() {
                text.push_str(&row);
                text.push('\n');
            }
        }
        fs::write(path, text).map_err(|e| io_usage("cannot write", path, e))?;
    }
    if reports.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(Failure::Check("gradient check failed".into()))
    }
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let params = SynthParams {
        seed: args.seed,
        classes: args.classes,
        n_per_class: args.per_class,
        grid: args.grid,
        frames: args.frames,
        rank: args.rank.unwrap_or(args.grid * args.grid),
        sigma: args.sigma,
        ..SynthParams::default()
    };
    let task = gen_synthetic(&params)?;
    println!("{}", task.describe());
    if task.dataset.class_counts().iter().all(|&n| n >= 2) {
        let acc = planted_baseline_accuracy(&task, args.seed)?;
        println!("nearest-class-mean baseline on planted windows: {acc:.4}");
    }
    save_dataset(&task.dataset, &args.out).map_err(|e| io_usage("cannot write", &args.out, e))?;
    println!(
        "wrote {} samples of dim {} to {}",
        task.dataset.len(),
        task.dataset.dim,
        args.out.display()
    );
    Ok(())
}

pub fn preprocess(args: PreprocessArgs) -> CmdResult {
    let seqs = read_sequences(&args.input)
        .map_err(|e| io_usage("cannot read sequences", &args.input, e))?;
    if seqs.is_empty() {
        return Err(Failure::Usage(format!(
            "{} holds no sequences",
            args.input.display()
        )));
    }
    let fit: Vec<usize> = match args.fit_split_seed {
        Some(seed) => {
            let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
            let classes = labels.iter().max().map_or(0, |m| m + 1);
            split_indices(&labels, classes, SplitRule::Fraction(0.7), seed)?.0
        }
        None => (0..seqs.len()).collect(),
    };
    let out = sequences_to_dataset(&seqs, args.pca_dim, args.lambda, &fit)?;
    for (i, e) in &out.failures {
        eprintln!("warning: sequence {i} skipped: {e}");
    }
    if out.dataset.is_empty() {
        return Err(Failure::Usage("no sequence produced a descriptor".into()));
    }
    save_dataset(&out.dataset, &args.out).map_err(|e| io_usage("cannot write", &args.out, e))?;
    println!(
        "wrote {} descriptors of dim {} ({} skipped) to {}",
        out.dataset.len(),
        out.dataset.dim,
        out.failures.len(),
        args.out.display()
    );
    Ok(())
}

pub fn inspect(args: InspectArgs) -> CmdResult {
    let bytes = fs::read(&args.path).map_err(|e| io_usage("cannot read", &args.path, e))?;
    let magic: [u8; 4] = bytes
        .get(..4)
        .and_then(|m| m.try_into().ok())
        .ok_or_else(|| {
            Failure::Usage(format!(
                "{} is too short to hold a header",
                args.path.display()
            ))
        })?;
    if magic == DATASET_MAGIC {
        let h = read_dataset_header(&bytes)?;
        let ds = SpdDataset::from_bytes(&bytes)?;
        println!(
            "magic: SPDS\nversion: {}\ndim: {}\nclasses: {}\nsamples: {}",
            h.version, h.dim, h.class_count, h.sample_count
        );
        println!("per-class counts: {:?}\nchecksum: ok", ds.class_counts());
    } else if magic == SEQUENCE_MAGIC {
        let seqs = sequences_from_bytes(&bytes)?;
        let dims: std::collections::BTreeSet<usize> = seqs.iter().map(|s| s.frame_dim()).collect();
        let frames: usize = seqs.iter().map(|s| s.frames.len()).sum();
        println!(
            "magic: SEQF\nsequences: {}\nframes: {frames}\nframe dims: {dims:?}",
            seqs.len()
        );
    } else if magic == CHECKPOINT_MAGIC {
        let ckpt = Checkpoint::from_bytes(&bytes)?;
        println!(
            "magic: MSNC\nversion: {CHECKPOINT_VERSION}\nepochs completed: {}",
            ckpt.epoch
        );
        println!("{}", ckpt.model.config.echo());
        for t in ckpt.model.tensor_specs()? {
            let dims: Vec<String> = t.dims.iter().map(|d| d.to_string()).collect();
            println!(
                "tensor {}: {}{}",
                t.name,
                dims.join("x"),
                if t.stiefel { " (stiefel)" } else { "" }
            );
        }
    } else {
        return Err(Failure::Usage(format!(
            "{}: unknown magic {:?}",
            args.path.display(),
            String::from_utf8_lossy(&magic)
        )));
    }
    Ok(())
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}
