#![allow(dead_code)]

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kavguard::{write_kav, ClassStats, FittedModel, KavDataset};

pub fn kavguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kavguard"))
        .args(args)
        .output()
        .expect("spawn kavguard")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn write_dataset(dir: &Path, name: &str, d: &KavDataset) -> PathBuf {
    let path = dir.join(name);
    write_kav(d, File::create(&path).unwrap()).unwrap();
    path
}

pub fn write_model(dir: &Path, name: &str, m: &FittedModel) -> PathBuf {
    let path = dir.join(name);
    kavguard::stats::write_stats(m, File::create(&path).unwrap()).unwrap();
    path
}

pub fn bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

/// The 4-record, 2-class, dim-2 fixture: class 0 {[1,3],[3,5]}, class 1 {[0,0],[2,4]}.
pub fn four_records() -> KavDataset {
    let mut d = KavDataset::new(2, 2, false).unwrap();
    d.push(Some(0), None, vec![1.0, 3.0]).unwrap();
    d.push(Some(1), None, vec![0.0, 0.0]).unwrap();
    d.push(Some(0), None, vec![3.0, 5.0]).unwrap();
    d.push(Some(1), None, vec![2.0, 4.0]).unwrap();
    d
}

/// Two classes in dims (a, b), test point at the origin with logits (2, 1):
/// d1 is the distance to class 0, d2 to class 1, and `joint_sq` the squared
/// distance to the joint Gaussian.
pub fn constructed(d1: f64, d2: f64, joint_sq: f64) -> (FittedModel, KavDataset) {
    let r = d2 * d2 - d1 * d1;
    let b2_sq = joint_sq / (1.0 - joint_sq / r);
    let q2 = b2_sq / r;
    let c0 = ClassStats::new(0, 1, vec![d1, 0.0], vec![1.0, 1.0], 1e-12).unwrap();
    let c1 = ClassStats::new(1, 1, vec![-d1, b2_sq.sqrt()], vec![1.0, q2], 1e-12).unwrap();
    let model = FittedModel::from_classes(2, 1e-12, [c0, c1]).unwrap();
    let mut d = KavDataset::new(2, 2, true).unwrap();
    d.push(None, Some(vec![2.0, 1.0]), vec![0.0, 0.0]).unwrap();
    (model, d)
}

/// Double-double accumulator (error-free TwoSum), ~106-bit significand.
#[derive(Default, Clone, Copy)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    pub fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        let lo = self.lo + err;
        self.hi = s + lo;
        self.lo = lo - (self.hi - s);
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}
