use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use kavguard::decision::{read_verdicts, VerdictWriter};
use kavguard::eval::{accuracy, auroc, outlier_rate, sweep_report, SweepLevel};
use kavguard::kav_store::{read_kav_csv, read_scores, KavHeader, KavReader, MAGIC};
use kavguard::members::build_member_store;
use kavguard::stats::{accumulate_all, read_stats, write_stats, ClassAccumulators};
use kavguard::{
    decide_batch, overlap_matrix, Category, DecisionConfig, Error, KavRecord, MemberStore, Result,
};

use crate::args::*;

/// Records decided per parallel batch while streaming.
const DECIDE_CHUNK: usize = 8192;

pub fn run(cli: Cli) -> Result<()> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Fit(a) => fit(a, verbose),
        Command::MergeStats(a) => merge_stats(a),
        Command::Decide(a) => decide(a, verbose),
        Command::Overlap(a) => overlap(a),
        Command::Eval(e) => match e {
            EvalCommand::Auroc(a) => eval_auroc(a),
            EvalCommand::Rate(a) => eval_rate(a),
            EvalCommand::Accuracy(a) => eval_accuracy(a),
            EvalCommand::Sweep(a) => eval_sweep(a),
        },
        Command::Members(a) => members(a),
    }
}

fn check_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such input file", path.display()),
        )))
    }
}

fn check_output(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    match parent {
        Some(dir) if !dir.is_dir() => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: output directory does not exist", dir.display()),
        ))),
        _ if path.is_dir() => Err(Error::usage(format!(
            "{}: output is a directory",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

type RecordStream = Box<dyn Iterator<Item = Result<KavRecord>>>;

/// Opens a KAV file as a record stream. Binary files stream; CSV is read whole.
///
/// Input is taken as CSV when it lacks the binary magic and either
/// `--num-classes` is given or the file name ends in `.csv`; anything else is
/// read as binary so a corrupt header is reported as a format error.
fn open_kav(input: &KavInput) -> Result<(KavHeader, RecordStream)> {
    let mut reader = open(&input.input)?;
    let binary = reader.fill_buf()?.starts_with(MAGIC);
    let csv_name = input
        .input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    match (binary, input.num_classes) {
        (false, Some(num_classes)) => {
            let dataset = read_kav_csv(reader, num_classes)?;
            let header = dataset.header();
            Ok((header, Box::new(dataset.into_records().into_iter().map(Ok))))
        }
        (false, None) if csv_name => Err(Error::usage(format!(
            "{}: CSV input needs --num-classes",
            input.input.display()
        ))),
        _ => {
            let kav = KavReader::new(reader)?;
            Ok((kav.header(), Box::new(kav)))
        }
    }
}

fn fit(a: FitArgs, verbose: u8) -> Result<()> {
    check_input(&a.input.input)?;
    check_output(&a.output)?;
    for p in a.members_out.iter().chain(&a.accumulators_out) {
        check_output(p)?;
    }
    if a.members == 0 {
        return Err(Error::usage("--members must be positive"));
    }
    let (header, records) = open_kav(&a.input)?;
    let accs = accumulate_all(records, header.dim as usize)?;
    let model = accs.finalize(a.variance_floor)?;
    write_stats(&model, create(&a.output)?)?;
    if let Some(path) = &a.accumulators_out {
        accs.write_json(create(path)?)?;
    }
    if let Some(path) = &a.members_out {
        let (_, records) = open_kav(&a.input)?;
        let mut store = build_member_store(records, &model, a.members)?;
        store.set_source_file(a.input.input.display().to_string());
        store.write_json(create(path)?)?;
    }
    println!(
        "fitted {} classes (dim {}) from {} records",
        model.num_classes(),
        model.dim(),
        header.count
    );
    if verbose > 0 {
        for c in model.classes() {
            eprintln!("class {}: {} records", c.class_id, c.count);
        }
    }
    Ok(())
}

fn merge_stats(a: MergeArgs) -> Result<()> {
    for p in &a.inputs {
        check_input(p)?;
    }
    check_output(&a.output)?;
    let mut total: Option<ClassAccumulators> = None;
    for p in &a.inputs {
        let part = ClassAccumulators::read_json(open(p)?)?;
        match &mut total {
            Some(t) => t.merge(&part)?,
            None => total = Some(part),
        }
    }
    let model = total
        .expect("clap requires one input")
        .finalize(a.variance_floor)?;
    write_stats(&model, create(&a.output)?)?;
    println!(
        "merged {} accumulator files into {} classes",
        a.inputs.len(),
        model.num_classes()
    );
    Ok(())
}

fn decide(a: DecideArgs, verbose: u8) -> Result<()> {
    check_input(&a.stats)?;
    check_input(&a.input.input)?;
    check_output(&a.output)?;
    let model = read_stats(open(&a.stats)?)?;
    let config = DecisionConfig {
        k_percent: a.k_percent,
        orientation: a.orientation.into(),
        top2_source: a.top2.into(),
        df: model.dim() as u64,
    };
    config.validate()?;
    let (header, mut records) = open_kav(&a.input)?;
    if header.dim as usize != model.dim() {
        return Err(Error::usage(format!(
            "input dim {} does not match stats dim {}",
            header.dim,
            model.dim()
        )));
    }
    let mut out = VerdictWriter::new(create(&a.output)?)?;
    let mut counts = [0u64; 3];
    let mut chunk = Vec::with_capacity(DECIDE_CHUNK);
    loop {
        chunk.clear();
        for r in records.by_ref().take(DECIDE_CHUNK) {
            chunk.push(r?);
        }
        if chunk.is_empty() {
            break;
        }
        for v in decide_batch(&chunk, &model, &config)? {
            counts[v.category as usize] += 1;
            out.write(&v)?;
        }
    }
    out.finish()?;
    println!(
        "certain={} uncertain={} outlier={}",
        counts[Category::Certain as usize],
        counts[Category::Uncertain as usize],
        counts[Category::Outlier as usize]
    );
    if verbose > 0 {
        eprintln!(
            "threshold on d_joint^2: {}",
            kavguard::outlier_threshold(config.df)?
        );
    }
    Ok(())
}

fn overlap(a: OverlapArgs) -> Result<()> {
    check_input(&a.stats)?;
    check_output(&a.output)?;
    let model = read_stats(open(&a.stats)?)?;
    let matrix = overlap_matrix(&model)?;
    matrix.write_csv(create(&a.output)?)?;
    println!("wrote {0}x{0} overlap matrix", matrix.len());
    Ok(())
}

fn all_scores(path: &Path) -> Result<Vec<f64>> {
    Ok(read_scores(open(path)?)?
        .into_iter()
        .map(|r| r.score)
        .collect())
}

fn split_scores(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (pos, neg): (Vec<_>, Vec<_>) = read_scores(open(path)?)?
        .into_iter()
        .partition(|r| r.positive);
    Ok((
        pos.into_iter().map(|r| r.score).collect(),
        neg.into_iter().map(|r| r.score).collect(),
    ))
}

fn eval_auroc(a: AurocArgs) -> Result<()> {
    let inputs: Vec<&PathBuf> = a.pos.iter().chain(&a.neg).chain(&a.scores).collect();
    for p in &inputs {
        check_input(p)?;
    }
    for p in a.output.iter().chain(&a.curve_csv) {
        check_output(p)?;
    }
    let (pos, neg) = match (&a.pos, &a.neg, &a.scores) {
        (Some(p), Some(n), None) => (all_scores(p)?, all_scores(n)?),
        (None, None, Some(s)) => split_scores(s)?,
        _ => return Err(Error::usage("give either --pos and --neg, or --scores")),
    };
    let roc = auroc(&pos, &neg)?;
    if let Some(path) = &a.output {
        roc.write_json(create(path)?)?;
    }
    if let Some(path) = &a.curve_csv {
        roc.write_csv(create(path)?)?;
    }
    println!("auroc={}", roc.auroc);
    Ok(())
}

fn eval_rate(a: RateArgs) -> Result<()> {
    check_input(&a.verdicts)?;
    let verdicts = read_verdicts(open(&a.verdicts)?)?;
    println!("outlier_rate={}", outlier_rate(&verdicts)?);
    Ok(())
}

fn eval_accuracy(a: AccuracyArgs) -> Result<()> {
    check_input(&a.verdicts)?;
    check_input(&a.truth.input)?;
    let verdicts = read_verdicts(open(&a.verdicts)?)?;
    let (_, records) = open_kav(&a.truth)?;
    let truth = records
        .map(|r| {
            let r = r?;
            r.label.ok_or_else(|| {
                Error::usage(format!(
                    "record {}: truth file has an unlabeled record",
                    r.record_index
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rep = accuracy(&verdicts, &truth)?;
    let certain = rep
        .certain_only
        .map_or_else(|| "n/a".to_string(), |v| v.to_string());
    println!(
        "overall={} certain_only={} abstain_rate={}",
        rep.overall, certain, rep.abstain_rate
    );
    Ok(())
}

fn parse_level(spec: &str) -> Result<(f64, PathBuf)> {
    let (level, path) = spec
        .split_once('=')
        .ok_or_else(|| Error::usage(format!("--level expects NOISE=PATH, got {spec:?}")))?;
    let level: f64 = level
        .trim()
        .parse()
        .map_err(|_| Error::usage(format!("bad noise level in {spec:?}")))?;
    Ok((level, PathBuf::from(path)))
}

fn eval_sweep(a: SweepArgs) -> Result<()> {
    let specs = a
        .levels
        .iter()
        .map(|s| parse_level(s))
        .collect::<Result<Vec<_>>>()?;
    for (_, p) in &specs {
        check_input(p)?;
    }
    check_output(&a.output)?;
    let levels = specs
        .iter()
        .map(|(level, path)| {
            let (positives, negatives) = split_scores(path)?;
            Ok(SweepLevel {
                noise_level: *level,
                positives,
                negatives,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = sweep_report(levels)?;
    report.write_csv(create(&a.output)?)?;
    println!("wrote {} sweep levels", report.levels.len());
    Ok(())
}

fn members(a: MembersArgs) -> Result<()> {
    check_input(&a.members)?;
    let store = MemberStore::read_json(open(&a.members)?)?;
    for idx in store.retrieve(a.class_id, a.m)? {
        println!("{idx}");
    }
    Ok(())
}
