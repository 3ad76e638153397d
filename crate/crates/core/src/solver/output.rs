//! Solution dumps: one binary field per node and a JSON manifest.

use super::{ProblemData, SchemeMetadata, SolutionPair};
use crate::grid::io::write_binary;
use serde::Serialize;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub config_hash: &'a str,
    pub level_sizes: Vec<usize>,
    pub horizon: f64,
    pub half_width: f64,
    pub scheme: &'a SchemeMetadata,
    pub residuals: &'a serde_json::Value,
    /// Relative paths of the `u` dumps, level by level.
    pub u_files: Vec<Vec<String>>,
    pub q_files: Vec<Vec<Vec<String>>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::other(format!("{}: {e}", path.display()))
}

/// Write `u` and `q` at every node under `dir/fields` plus `dir/manifest.json`.
pub fn write_solution(
    dir: &Path,
    problem: &ProblemData,
    solution: &SolutionPair,
    config_hash: &str,
    residuals: &serde_json::Value,
) -> std::io::Result<PathBuf> {
    let fields = dir.join("fields");
    fs::create_dir_all(&fields)?;
    let tree = &problem.tree;
    let mut u_files = Vec::new();
    let mut q_files = Vec::new();
    for level in 0..=tree.n_steps() {
        let mut us = Vec::new();
        let mut qs = Vec::new();
        for node in tree.nodes_at(level) {
            let name = format!("u_{}_{}.bin", node.level, node.index);
            let path = fields.join(&name);
            let out = BufWriter::new(File::create(&path)?);
            write_binary(&problem.grid, solution.u.get(node), out).map_err(|e| io_err(&path, e))?;
            us.push(format!("fields/{name}"));
            let mut node_q = Vec::new();
            for (k, qk) in solution.q.get(node).iter().enumerate() {
                let name = format!("q{}_{}_{}.bin", k + 1, node.level, node.index);
                let path = fields.join(&name);
                let out = BufWriter::new(File::create(&path)?);
                write_binary(&problem.grid, qk, out).map_err(|e| io_err(&path, e))?;
                node_q.push(format!("fields/{name}"));
            }
            qs.push(node_q);
        }
        u_files.push(us);
        q_files.push(qs);
    }
    let manifest = Manifest {
        config_hash,
        level_sizes: (0..=tree.n_steps()).map(|l| tree.level_size(l)).collect(),
        horizon: tree.time_grid().horizon(),
        half_width: problem.grid.half_width(),
        scheme: &solution.meta,
        residuals,
        u_files,
        q_files,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text)?;
    Ok(path)
}
