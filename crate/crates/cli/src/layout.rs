//! File layout of a campaign directory.

use std::path::{Path, PathBuf};

use ic2vqa::eval::{fmt_sig, Record};

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.root.join("prepared")
    }

    pub fn provenance(&self) -> PathBuf {
        self.prepared_dir().join("provenance.json")
    }

    /// Append-only journal of finished cells.
    pub fn journal(&self) -> PathBuf {
        self.root.join("records.jsonl")
    }

    pub fn table_jsonl(&self) -> PathBuf {
        self.root.join("table.jsonl")
    }

    pub fn table_csv(&self) -> PathBuf {
        self.root.join("table.csv")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn summary_csv(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// `cells/<attack>/<video>__<metric>__eps<ε·255>__I<I>`.
    pub fn cell_dir(&self, r: &Record) -> PathBuf {
        self.root.join("cells").join(sanitize(&r.attack)).join(format!(
            "{}__{}__eps{}__I{}",
            sanitize(&r.video_id),
            sanitize(&r.white_box_metric),
            fmt_sig(r.epsilon * 255.0),
            r.iterations
        ))
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+') { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ic2vqa::attack::AttackKind;

    #[test]
    fn cell_names_carry_the_grid_coordinates() {
        let r = Record {
            video_id: "clip one".into(),
            attack: "ic2vqa".into(),
            attack_kind: AttackKind::Ic2vqa,
            white_box_metric: "spaq".into(),
            epsilon: 10.0 / 255.0,
            iterations: 5,
            clean_score: 0.0,
            attacked_score: None,
            error: None,
        };
        let dir = Layout::new("/out").cell_dir(&r);
        assert_eq!(dir, PathBuf::from("/out/cells/ic2vqa/clip_one__spaq__eps10__I5"));
    }
}
