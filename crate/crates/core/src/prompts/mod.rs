//! Prompt construction for every pipeline stage.
//!
//! Templates are versioned plain-text files with `{{name}}` placeholders. The
//! built-in set is compiled in from `templates/v1`; a directory with the same
//! file names can replace it at run time. Rendering is a pure function of the
//! stage, its inputs and the template set.

mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::Message;
use crate::harness::TestReport;
use crate::pipelines::{Candidate, ReviewReport};
use crate::problem::ProblemSpec;

pub use template::{placeholders, render};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Plan,
    CodeWithPlan,
    Review,
    Fix,
    RetryFix,
    Enrich,
    Compare,
    ReviewPair,
    Synthesize,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Generate,
        Stage::Plan,
        Stage::CodeWithPlan,
        Stage::Review,
        Stage::Fix,
        Stage::RetryFix,
        Stage::Enrich,
        Stage::Compare,
        Stage::ReviewPair,
        Stage::Synthesize,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Stage::Generate => "generate.txt",
            Stage::Plan => "plan.txt",
            Stage::CodeWithPlan => "code_with_plan.txt",
            Stage::Review => "review.txt",
            Stage::Fix => "fix.txt",
            Stage::RetryFix => "retry_fix.txt",
            Stage::Enrich => "enrich.txt",
            Stage::Compare => "compare.txt",
            Stage::ReviewPair => "review_pair.txt",
            Stage::Synthesize => "synthesize.txt",
        }
    }

    /// Placeholders a template for this stage may use. Those in the second
    /// list may be omitted from the template.
    pub fn placeholder_set(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Stage::Generate => (&["prompt"], &["import_inventory"]),
            Stage::Plan => (&["prompt"], &[]),
            Stage::CodeWithPlan => (&["prompt", "plan"], &["import_inventory"]),
            Stage::Review => (&["spec", "code"], &["enrichment"]),
            Stage::Fix => (&["prompt", "code", "findings"], &["import_inventory"]),
            Stage::RetryFix => (&["prompt", "code", "test_feedback"], &["import_inventory"]),
            Stage::Enrich => (&["prompt"], &[]),
            Stage::Compare => (&["prompt", "code_a", "code_b"], &[]),
            Stage::ReviewPair => (&["prompt", "code_a", "code_b"], &["evidence_a", "evidence_b"]),
            Stage::Synthesize => (
                &["prompt", "code_a", "code_b", "review_a", "review_b"],
                &["evidence_a", "evidence_b", "import_inventory"],
            ),
        }
    }

    /// Stages answered by the reasoning model acting as analyst or reviewer.
    pub fn is_analysis(self) -> bool {
        matches!(
            self,
            Stage::Plan | Stage::Review | Stage::Enrich | Stage::Compare | Stage::ReviewPair
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub stage: Stage,
    pub messages: Vec<Message>,
    pub template_version: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template {file}: {message}")]
    Invalid { file: String, message: String },
}

/// A complete, validated set of templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    version: String,
    coder_system: String,
    reviewer_system: String,
    import_inventory: String,
    stages: BTreeMap<Stage, String>,
}

macro_rules! builtin {
    ($file:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/v1/", $file))
    };
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let files: Vec<(&str, &str)> = vec![
            ("VERSION", builtin!("VERSION")),
            ("coder_system.txt", builtin!("coder_system.txt")),
            ("reviewer_system.txt", builtin!("reviewer_system.txt")),
            ("import_inventory.txt", builtin!("import_inventory.txt")),
            ("generate.txt", builtin!("generate.txt")),
            ("plan.txt", builtin!("plan.txt")),
            ("code_with_plan.txt", builtin!("code_with_plan.txt")),
            ("review.txt", builtin!("review.txt")),
            ("fix.txt", builtin!("fix.txt")),
            ("retry_fix.txt", builtin!("retry_fix.txt")),
            ("enrich.txt", builtin!("enrich.txt")),
            ("compare.txt", builtin!("compare.txt")),
            ("review_pair.txt", builtin!("review_pair.txt")),
            ("synthesize.txt", builtin!("synthesize.txt")),
        ];
        Self::from_files(|name| {
            files
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, body)| body.to_string())
                .ok_or_else(|| TemplateError::Invalid {
                    file: name.to_string(),
                    message: "missing from built-in set".into(),
                })
        })
        .expect("built-in templates are valid")
    }

    /// Loads a template directory laid out like `templates/v1`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        Self::from_files(|name| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })
        })
    }

    fn from_files(mut read: impl FnMut(&str) -> Result<String, TemplateError>) -> Result<Self, TemplateError> {
        let version = read("VERSION")?.trim().to_string();
        if version.is_empty() {
            return Err(TemplateError::Invalid {
                file: "VERSION".into(),
                message: "empty version".into(),
            });
        }
        let mut stages = BTreeMap::new();
        for stage in Stage::ALL {
            let body = read(stage.file_name())?.trim_end().to_string();
            validate(stage, &body)?;
            stages.insert(stage, body);
        }
        Ok(Self {
            version,
            coder_system: read("coder_system.txt")?.trim_end().to_string(),
            reviewer_system: read("reviewer_system.txt")?.trim_end().to_string(),
            import_inventory: read("import_inventory.txt")?.trim_end().to_string(),
            stages,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }
}

fn validate(stage: Stage, body: &str) -> Result<(), TemplateError> {
    let invalid = |message: String| TemplateError::Invalid {
        file: stage.file_name().to_string(),
        message,
    };
    let used = placeholders(body).map_err(invalid)?;
    let (required, optional) = stage.placeholder_set();
    let allowed: BTreeSet<&str> = required.iter().chain(optional).copied().collect();
    if let Some(unknown) = used.iter().find(|n| !allowed.contains(n.as_str())) {
        return Err(invalid(format!("unknown placeholder `{unknown}`")));
    }
    if let Some(missing) = required.iter().find(|n| !used.contains(**n)) {
        return Err(invalid(format!("required placeholder `{missing}` is not used")));
    }
    Ok(())
}

/// Renders prompts from a [`TemplateSet`].
#[derive(Debug, Clone)]
pub struct PromptKit {
    templates: TemplateSet,
}

impl Default for PromptKit {
    fn default() -> Self {
        Self::new(TemplateSet::builtin())
    }
}

impl PromptKit {
    pub fn new(templates: TemplateSet) -> Self {
        Self { templates }
    }

    pub fn template_version(&self) -> &str {
        self.templates.version()
    }

    /// The allow-list of imports plus the must-import rule. Static text: it
    /// does not depend on the problem.
    pub fn build_import_inventory(&self, _problem: &ProblemSpec) -> String {
        self.templates.import_inventory.clone()
    }

    fn bundle(&self, stage: Stage, values: &[(&str, &str)]) -> PromptBundle {
        let system = if stage.is_analysis() {
            &self.templates.reviewer_system
        } else {
            &self.templates.coder_system
        };
        let user = render(&self.templates.stages[&stage], values);
        PromptBundle {
            stage,
            messages: vec![Message::system(system.clone()), Message::user(user)],
            template_version: self.templates.version.clone(),
        }
    }

    pub fn render_generate(&self, problem: &ProblemSpec, import_inventory: Option<&str>) -> PromptBundle {
        let inventory = section(import_inventory);
        self.bundle(
            Stage::Generate,
            &[("prompt", problem.prompt.trim_end()), ("import_inventory", &inventory)],
        )
    }

    pub fn render_plan(&self, problem: &ProblemSpec) -> PromptBundle {
        self.bundle(Stage::Plan, &[("prompt", problem.prompt.trim_end())])
    }

    pub fn render_code_with_plan(
        &self,
        problem: &ProblemSpec,
        plan: &str,
        import_inventory: Option<&str>,
    ) -> PromptBundle {
        let inventory = section(import_inventory);
        self.bundle(
            Stage::CodeWithPlan,
            &[
                ("prompt", problem.prompt.trim_end()),
                ("plan", plan.trim()),
                ("import_inventory", &inventory),
            ],
        )
    }

    pub fn render_review(
        &self,
        problem: &ProblemSpec,
        candidate: &Candidate,
        enriched_spec: Option<&str>,
    ) -> PromptBundle {
        let enrichment = enriched_spec
            .map(|e| format!("\n\nAdditional examples, types and edge cases:\n{}", e.trim()))
            .unwrap_or_default();
        self.bundle(
            Stage::Review,
            &[
                ("spec", problem.prompt.trim_end()),
                ("enrichment", &enrichment),
                ("code", &candidate.code),
            ],
        )
    }

    pub fn render_fix(
        &self,
        problem: &ProblemSpec,
        candidate: &Candidate,
        review: &ReviewReport,
        import_inventory: Option<&str>,
    ) -> PromptBundle {
        let inventory = section(import_inventory);
        let findings = review.findings_text();
        self.bundle(
            Stage::Fix,
            &[
                ("prompt", problem.prompt.trim_end()),
                ("code", &candidate.code),
                ("findings", &findings),
                ("import_inventory", &inventory),
            ],
        )
    }

    pub fn render_retry_fix(
        &self,
        problem: &ProblemSpec,
        candidate: &Candidate,
        report: &TestReport,
        import_inventory: Option<&str>,
    ) -> PromptBundle {
        let inventory = section(import_inventory);
        let feedback = report.feedback();
        self.bundle(
            Stage::RetryFix,
            &[
                ("prompt", problem.prompt.trim_end()),
                ("code", &candidate.code),
                ("test_feedback", &feedback),
                ("import_inventory", &inventory),
            ],
        )
    }

    pub fn render_enrich(&self, problem: &ProblemSpec) -> PromptBundle {
        self.bundle(Stage::Enrich, &[("prompt", problem.prompt.trim_end())])
    }

    pub fn render_compare(&self, problem: &ProblemSpec, a: &Candidate, b: &Candidate) -> PromptBundle {
        self.bundle(
            Stage::Compare,
            &[
                ("prompt", problem.prompt.trim_end()),
                ("code_a", &a.code),
                ("code_b", &b.code),
            ],
        )
    }

    pub fn render_review_pair(
        &self,
        problem: &ProblemSpec,
        a: (&Candidate, &TestReport),
        b: (&Candidate, &TestReport),
    ) -> PromptBundle {
        let (evidence_a, evidence_b) = (a.1.feedback(), b.1.feedback());
        self.bundle(
            Stage::ReviewPair,
            &[
                ("prompt", problem.prompt.trim_end()),
                ("code_a", &a.0.code),
                ("code_b", &b.0.code),
                ("evidence_a", &evidence_a),
                ("evidence_b", &evidence_b),
            ],
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn render_synthesize(
        &self,
        problem: &ProblemSpec,
        cand_a: &Candidate,
        cand_b: &Candidate,
        review_a: &ReviewReport,
        review_b: &ReviewReport,
        evidence: (&TestReport, &TestReport),
        import_inventory: Option<&str>,
    ) -> PromptBundle {
        let inventory = section(import_inventory);
        let (review_a, review_b) = (review_a.findings_text(), review_b.findings_text());
        let (evidence_a, evidence_b) = (evidence.0.feedback(), evidence.1.feedback());
        self.bundle(
            Stage::Synthesize,
            &[
                ("prompt", problem.prompt.trim_end()),
                ("code_a", &cand_a.code),
                ("code_b", &cand_b.code),
                ("review_a", &review_a),
                ("review_b", &review_b),
                ("evidence_a", &evidence_a),
                ("evidence_b", &evidence_b),
                ("import_inventory", &inventory),
            ],
        )
    }
}

fn section(text: Option<&str>) -> String {
    text.map(|t| format!("\n\n{}", t.trim())).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Role;
    use crate::harness::{TestFailure, TestStatus};
    use crate::pipelines::{CandidateStage, Finding, Verdict};

    fn problem() -> ProblemSpec {
        ProblemSpec::new(
            "HumanEval/53",
            "def add(x: int, y: int):\n    \"\"\"Add two numbers x and y\n    >>> add(2, 3)\n    5\n    \"\"\"\n",
            "add",
        )
    }

    fn candidate(code: &str) -> Candidate {
        Candidate::new(code, "add", Role::Coder, CandidateStage::Initial, None)
    }

    fn user_text(b: &PromptBundle) -> &str {
        &b.messages.last().unwrap().text
    }

    #[test]
    fn builtin_set_loads() {
        let kit = PromptKit::default();
        assert_eq!(kit.template_version(), "v1");
    }

    #[test]
    fn generate_embeds_prompt_and_inventory() {
        let kit = PromptKit::default();
        let p = problem();
        let plain = kit.render_generate(&p, None);
        assert!(user_text(&plain).contains(p.prompt.trim_end()));
        let inventory = kit.build_import_inventory(&p);
        let with = kit.render_generate(&p, Some(&inventory));
        assert!(user_text(&with).contains(p.prompt.trim_end()));
        assert!(user_text(&with).contains(&inventory));
        assert!(!user_text(&plain).contains(&inventory));
        assert_eq!(plain, kit.render_generate(&p, None));
        assert_eq!(plain.stage, Stage::Generate);
    }

    #[test]
    fn plan_asks_for_sections_and_forbids_code() {
        let kit = PromptKit::default();
        let b = kit.render_plan(&problem());
        let text = user_text(&b).to_lowercase();
        for word in ["algorithm", "edge cases", "complexity", "do not write any code"] {
            assert!(text.contains(word), "missing {word}");
        }
        assert_eq!(b, kit.render_plan(&problem()));
    }

    #[test]
    fn plan_renders_for_signature_only_problem() {
        let kit = PromptKit::default();
        let p = ProblemSpec::new("x", "def f(a, b):\n", "f");
        assert!(user_text(&kit.render_plan(&p)).contains("def f(a, b):"));
    }

    #[test]
    fn analysis_templates_never_ask_for_code() {
        let kit = PromptKit::default();
        let p = problem();
        let c = candidate("def add(x, y):\n    return x + y");
        let report = TestReport::passed(0);
        for b in [
            kit.render_plan(&p),
            kit.render_review(&p, &c, None),
            kit.render_enrich(&p),
            kit.render_compare(&p, &c, &c),
            kit.render_review_pair(&p, (&c, &report), (&c, &report)),
        ] {
            assert!(b.stage.is_analysis());
            assert!(user_text(&b).contains("Do not write"), "{:?}", b.stage);
            assert!(b.messages[0].text.contains("never rewrite"));
        }
    }

    #[test]
    fn review_embeds_code_spec_and_enrichment() {
        let kit = PromptKit::default();
        let p = problem();
        let c = candidate("def add(x, y):\n    return x - y");
        let plain = kit.render_review(&p, &c, None);
        assert!(user_text(&plain).contains(&c.code));
        assert!(user_text(&plain).contains(p.prompt.trim_end()));
        assert!(user_text(&plain).contains("VERDICT: CLEAN"));
        let enriched = kit.render_review(&p, &c, Some("add(0, 0) -> 0"));
        assert!(user_text(&enriched).contains("add(0, 0) -> 0"));
        assert_eq!(plain, kit.render_review(&p, &c, None));
    }

    #[test]
    fn fix_embeds_findings_verbatim() {
        let kit = PromptKit::default();
        let p = problem();
        let c = candidate("def add(x, y):\n    return x - y");
        let review = ReviewReport {
            verdict: Verdict::Bugs,
            findings: vec![Finding::parse("line 2 returns x-y, should return x+y")],
            raw_text: "1. line 2 returns x-y, should return x+y\nVERDICT: BUGS".into(),
        };
        let inventory = kit.build_import_inventory(&p);
        let b = kit.render_fix(&p, &c, &review, Some(&inventory));
        let text = user_text(&b);
        assert!(text.contains("1. line 2 returns x-y, should return x+y"));
        assert!(text.contains(&c.code));
        assert!(text.contains(p.prompt.trim_end()));
        assert!(text.contains(&inventory));
        assert_eq!(b, kit.render_fix(&p, &c, &review, Some(&inventory)));
    }

    #[test]
    fn retry_fix_embeds_failures() {
        let kit = PromptKit::default();
        let p = problem();
        let c = candidate("def add(x, y):\n    return x - y");
        let report = TestReport {
            status: TestStatus::Failed,
            failures: vec![TestFailure {
                test: "add(2, 3)".into(),
                expected: "5".into(),
                actual_or_error: "-1".into(),
            }],
            ..TestReport::passed(3)
        };
        let text = user_text(&kit.render_retry_fix(&p, &c, &report, None)).to_string();
        assert!(text.contains("add(2, 3)"));
        assert!(text.contains("-1"));
    }

    #[test]
    fn enrich_and_synthesize_embed_inputs() {
        let kit = PromptKit::default();
        let p = problem();
        let e = kit.render_enrich(&p);
        assert!(user_text(&e).contains(p.prompt.trim_end()));
        assert!(user_text(&e).contains("without changing"));
        assert_eq!(e, kit.render_enrich(&p));

        let a = candidate("def add(x, y):\n    return x - y");
        let b = Candidate::new(
            "def add(x, y):\n    return x * y",
            "add",
            Role::Planner,
            CandidateStage::Initial,
            None,
        );
        let ra = ReviewReport::parse("1. subtracts, should add\nVERDICT: BUGS").unwrap();
        let rb = ReviewReport::parse("1. multiplies, should add\nVERDICT: BUGS").unwrap();
        let fail = TestReport {
            status: TestStatus::Failed,
            ..TestReport::passed(1)
        };
        let s = kit.render_synthesize(&p, &a, &b, &ra, &rb, (&fail, &fail), None);
        for needle in [
            a.code.as_str(),
            b.code.as_str(),
            "subtracts, should add",
            "multiplies, should add",
        ] {
            assert!(user_text(&s).contains(needle));
        }
        assert_eq!(s, kit.render_synthesize(&p, &a, &b, &ra, &rb, (&fail, &fail), None));
    }

    #[test]
    fn prompt_with_braces_is_embedded_verbatim() {
        let kit = PromptKit::default();
        let p = ProblemSpec::new("t", "def f(d):\n    \"\"\"{{plan}} {x: 1}\"\"\"\n", "f");
        assert!(user_text(&kit.render_generate(&p, None)).contains("{{plan}} {x: 1}"));
    }

    #[test]
    fn load_dir_validates_placeholders() {
        let dir = tempfile::tempdir().unwrap();
        let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates/v1");
        for entry in fs::read_dir(&src).unwrap() {
            let entry = entry.unwrap();
            fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
        assert_eq!(TemplateSet::load_dir(dir.path()).unwrap(), TemplateSet::builtin());

        fs::write(dir.path().join("plan.txt"), "{{prompt}} {{code}}").unwrap();
        let err = TemplateSet::load_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("unknown placeholder `code`"));

        fs::write(dir.path().join("plan.txt"), "no placeholders").unwrap();
        let err = TemplateSet::load_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("required placeholder `prompt`"));
    }
}
