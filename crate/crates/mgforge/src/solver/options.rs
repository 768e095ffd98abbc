//! Flat string option database with prefix nesting and consumed-key
//! tracking, plus the file format (`key value` per line, `#` comments).

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

/// Option keys understood by the solver builder, written as patterns:
/// `<ksp>` marks a Krylov prefix (empty, `mg_levels_`, `mg_coarse_`,
/// `mg_coarse_telescope_`), `<pc>` the matching preconditioner prefix.
pub const SUPPORTED_KEYS: &[&str] = &[
    "<ksp>ksp_type                          preonly | cg | richardson | chebyshev",
    "<ksp>ksp_max_it                        nonnegative integer",
    "<ksp>ksp_rtol                          relative tolerance",
    "<ksp>ksp_atol                          absolute tolerance",
    "<ksp>ksp_norm_type                     unpreconditioned | preconditioned | none",
    "<ksp>ksp_convergence_test              default | skip",
    "<ksp>ksp_richardson_scale              damping factor",
    "<ksp>ksp_chebyshev_esteig_steps        power-iteration steps",
    "<ksp>ksp_chebyshev_esteig_min_factor   lower spectrum safety factor",
    "<ksp>ksp_chebyshev_esteig_max_factor   upper spectrum safety factor",
    "<pc>pc_type                            none | jacobi | lu | mg | patch | telescope",
    "<pc>pc_mg_type                         v | multiplicative | full",
    "<pc>pc_mg_log                          (flag) per-level stage logging",
    "<pc>pc_lu_max_dofs                     dense coarse-solve dof cap",
    "<pc>patch_pc_patch_construct_type      star",
    "<pc>patch_pc_patch_construct_dim       0",
    "<pc>pc_telescope_reduction_factor      group size (divides team size)",
    "<pc>pc_telescope_subcomm_type          contiguous",
    "mg_levels_<...>                        smoother options per level",
    "mg_coarse_<...>                        coarse solver options",
    "telescope_<...>                        options of the telescoped inner solver",
];

/// Flat map from underscore-joined keys to string values. Values read
/// during solver construction are marked consumed; leftovers are
/// reported as unknown options.
#[derive(Debug, Clone, Default)]
pub struct OptionTree {
    map: BTreeMap<String, String>,
    consumed: RefCell<BTreeSet<String>>,
}

impl OptionTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut t = Self::new();
        for (k, v) in pairs {
            t.set(k, v);
        }
        t
    }

    /// Parses the options file format: one `key value` per line, empty
    /// value allowed (flag keys), `#` starts a comment.
    pub fn from_text(text: &str) -> Self {
        let mut t = Self::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once(char::is_whitespace) {
                Some((k, v)) => t.set(k.trim(), v.trim()),
                None => t.set(line, ""),
            }
        }
        t
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.map.insert(key.into(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    /// Reads a key, marking it consumed.
    pub fn take(&self, key: &str) -> Option<&str> {
        let v = self.map.get(key)?;
        self.consumed.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    pub fn take_parsed<T: std::str::FromStr>(&self, key: &str, hint: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| Error::InvalidValue {
                key: key.to_string(),
                value: raw.to_string(),
                hint: hint.to_string(),
            }),
        }
    }

    /// Keys never consumed by the builder.
    pub fn unconsumed(&self) -> Vec<String> {
        let consumed = self.consumed.borrow();
        self.map
            .keys()
            .filter(|k| !consumed.contains(*k))
            .cloned()
            .collect()
    }

    /// Errors with the full supported-key listing if anything was left
    /// unconsumed.
    pub fn check_fully_consumed(&self) -> Result<()> {
        let leftovers = self.unconsumed();
        if !leftovers.is_empty() {
            return Err(Error::UnknownOption {
                key: leftovers.join(", "),
                supported: SUPPORTED_KEYS.join("\n"),
            });
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }
}

/// Flattens a nested listing-style map into native option keys,
/// translating the delegation wrappers:
/// `pc_type python` + `pc_python_type *PatchPC` collapses to
/// `pc_type patch`, and the `AssembledPC`/`assembled_` re-wrap around a
/// telescope collapses to a plain telescope preconditioner.
pub fn translate_petsc_style(pairs: &[(String, String)]) -> OptionTree {
    let mut out = OptionTree::new();
    let mut python_class: BTreeMap<String, String> = BTreeMap::new();
    // first pass: remember delegation classes per prefix
    for (k, v) in pairs {
        if let Some(prefix) = k.strip_suffix("pc_python_type") {
            python_class.insert(prefix.to_string(), v.clone());
        }
    }
    for (k, v) in pairs {
        // strip the assembled re-wrap layer entirely
        let k = k.replace("assembled_", "");
        if k.ends_with("pc_python_type") || k == "pc_python_type" {
            continue;
        }
        if k.ends_with("mat_type") {
            continue;
        }
        if k.ends_with("pc_type") && v == "python" {
            let prefix = k.strip_suffix("pc_type").unwrap();
            let class = python_class
                .iter()
                .find(|(p, _)| k.starts_with(p.as_str()) || p.as_str() == prefix)
                .map(|(_, c)| c.as_str())
                .unwrap_or("");
            if class.ends_with("PatchPC") {
                out.set(k.clone(), "patch");
            }
            continue;
        }
        if k.ends_with("pc_type") && v == "telescope" {
            out.set(k.clone(), "telescope");
            continue;
        }
        out.set(k.clone(), v.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_parsing_with_comments_and_flags() {
        let t = OptionTree::from_text(
            "ksp_type preonly\n# comment line\npc_type mg   # trailing\npc_mg_log\n",
        );
        assert_eq!(t.take("ksp_type"), Some("preonly"));
        assert_eq!(t.take("pc_type"), Some("mg"));
        assert_eq!(t.take("pc_mg_log"), Some(""));
        assert!(t.check_fully_consumed().is_ok());
    }

    #[test]
    fn unconsumed_keys_are_reported() {
        let t = OptionTree::from_text("ksp_type cg\npc_type frobnicate\n");
        t.take("ksp_type");
        let err = t.check_fully_consumed().unwrap_err();
        match err {
            Error::UnknownOption { key, supported } => {
                assert!(key.contains("pc_type"));
                assert!(supported.contains("chebyshev"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parsed_values_validate() {
        let t = OptionTree::from_text("ksp_max_it five\n");
        assert!(matches!(
            t.take_parsed::<usize>("ksp_max_it", "integer"),
            Err(Error::InvalidValue { .. })
        ));
    }

    #[test]
    fn petsc_delegation_wrappers_flatten() {
        // the nested listing dictionaries, already flattened by prefix
        let pairs: Vec<(String, String)> = [
            ("ksp_type", "preonly"),
            ("pc_type", "mg"),
            ("pc_mg_log", ""),
            ("pc_mg_type", "full"),
            ("mg_levels_ksp_type", "chebyshev"),
            ("mg_levels_ksp_max_it", "2"),
            ("mg_levels_ksp_norm_type", "unpreconditioned"),
            ("mg_levels_ksp_convergence_test", "skip"),
            ("mg_levels_pc_type", "python"),
            ("mg_levels_pc_python_type", "firedrake.PatchPC"),
            ("mg_levels_patch_pc_patch_construct_type", "star"),
            ("mg_levels_patch_pc_patch_construct_dim", "0"),
            ("mg_coarse_pc_type", "python"),
            ("mg_coarse_pc_python_type", "firedrake.AssembledPC"),
            ("mg_coarse_assembled_mat_type", "aij"),
            ("mg_coarse_assembled_pc_type", "telescope"),
            ("mg_coarse_assembled_pc_telescope_reduction_factor", "2"),
            ("mg_coarse_assembled_pc_telescope_subcomm_type", "contiguous"),
            ("mg_coarse_assembled_telescope_pc_type", "lu"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let t = translate_petsc_style(&pairs);
        assert_eq!(t.take("mg_levels_pc_type"), Some("patch"));
        assert_eq!(t.take("mg_coarse_pc_type"), Some("telescope"));
        assert_eq!(t.take("mg_coarse_pc_telescope_reduction_factor"), Some("2"));
        assert_eq!(t.take("mg_coarse_telescope_pc_type"), Some("lu"));
        assert!(!t.contains("mg_coarse_assembled_mat_type"));
        assert!(!t.contains("mg_levels_pc_python_type"));
    }
}
