use std::fs;
use std::path::{Path, PathBuf};

use lexforge::cli::{run, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
use lexforge::formats::{EmbeddingFormat, Embeddings};
use lexforge::numerics::{Matrix, Rng};
use lexforge::vocab::Vocabulary;
use tempfile::TempDir;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn lexforge(args: &[&str]) -> Outcome {
    lexforge_env(args, None)
}

fn lexforge_env(args: &[&str], env_seed: Option<&str>) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("lexforge").chain(args.iter().copied());
    let code = run(argv, env_seed, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CORPUS: &str = "the cat sat on the mat\nthe dog sat on the log\ncats and dogs and mats\n";

fn write_vocab(dir: &Path, name: &str, pieces: &[&str]) -> PathBuf {
    let tokens = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .iter()
        .chain(pieces)
        .map(|s| s.to_string())
        .collect();
    let path = dir.join(name);
    Vocabulary::from_tokens(tokens).unwrap().save(&path).unwrap();
    path
}

fn write_embeddings(dir: &Path, name: &str, vocab: &Path, dim: usize, seed: u64) -> PathBuf {
    let vocab = Vocabulary::load(vocab).unwrap();
    let mut rng = Rng::new(seed);
    let m = Matrix::from_fn(vocab.len(), dim, |_, _| rng.normal(0.0, 1.0) as f32);
    let path = dir.join(name);
    Embeddings::for_vocab(&vocab, m)
        .unwrap()
        .save(&path, EmbeddingFormat::Text)
        .unwrap();
    path
}

#[test]
fn train_tokenizer_is_reproducible_and_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("c.txt");
    fs::write(&corpus, CORPUS).unwrap();
    let a = dir.path().join("a.vocab");
    let b = dir.path().join("b.vocab");
    for out in [&a, &b] {
        let r = lexforge(&["train-tokenizer", "--corpus", p(&corpus), "--size", "60", "--out", p(out)]);
        assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let vocab = Vocabulary::load(&a).unwrap();
    assert!(vocab.len() <= 60);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a.vocab.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train-tokenizer");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config"]["size"], 60);
    let corpus_hash = lexforge::cli::file_sha256(&corpus).unwrap();
    assert_eq!(manifest["inputs"][p(&corpus)], corpus_hash.as_str());
}

#[test]
fn analyze_self_is_total_overlap() {
    let dir = TempDir::new().unwrap();
    let v = write_vocab(dir.path(), "v.vocab", &["a", "##b", "cat", "7"]);
    let r = lexforge(&["analyze", "--target", p(&v), "--base", p(&v)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("unk_rate\t0.000000\n"), "{}", r.stdout);
    assert!(r.stdout.contains("lex_overlap_rate\t1.000000\n"));
}

#[test]
fn group_overlap_counts_and_lists() {
    let dir = TempDir::new().unwrap();
    let t = write_vocab(dir.path(), "t.vocab", &["a", "##ab", "д", "42", "zz"]);
    let b = write_vocab(dir.path(), "b.vocab", &["a", "##ab", "д", "42"]);
    let r = lexforge(&["group-overlap", "--target", p(&t), "--base", p(&b)]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.stdout.contains("total\t4\n"), "{}", r.stdout);
    let r = lexforge(&["group-overlap", "--target", p(&t), "--base", p(&b), "--list"]);
    assert!(r.stdout.starts_with("token\tgroup\n"));
    assert_eq!(r.stdout.lines().count(), 5);
}

#[test]
fn check_correlations_bundled_and_directory() {
    let r = lexforge(&["check-correlations"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.matches("PASS").count(), 2);

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let r = lexforge(&["check-correlations", "--fixtures", p(&fixtures)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("r_unk\t-0.7979"));
    assert!(r.stdout.contains("r_lex\t0.4427"));
}

#[test]
fn check_correlations_reports_failure() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("table1_metrics.tsv"),
        "lang\tunk_rate\tlex_overlap_rate\na\t0.1\t0.5\nb\t0.2\t0.4\nc\t0.3\t0.3\n",
    )
    .unwrap();
    fs::write(dir.path().join("table4a_mbert.tsv"), "lang\tscore\na\t1\nb\t2\nc\t3\n").unwrap();
    let r = lexforge(&["check-correlations", "--fixtures", p(dir.path())]);
    assert_eq!(r.code, EXIT_NUMERICAL);
    assert!(r.stdout.contains("FAIL"));
}

#[test]
fn factorize_reconstruct_and_report() {
    let dir = TempDir::new().unwrap();
    let v = write_vocab(dir.path(), "v.vocab", &["a", "b", "c", "##d", "дом", "ка", "x", "y", "z", "q", "w"]);
    let e = write_embeddings(dir.path(), "e.txt", &v, 6, 1);
    let model = dir.path().join("m.mfac");
    let trace = dir.path().join("trace.tsv");
    for method in ["semi-nmf", "kmeans", "neural"] {
        let r = lexforge(&[
            "factorize", "--embeddings", p(&e), "--method", method, "--clusters", "2", "--dim", "2", "--steps", "50",
            "--trace", p(&trace), "--out", p(&model),
        ]);
        assert_eq!(r.code, EXIT_OK, "{method}: {}", r.stderr);
        if method != "kmeans" {
            assert!(fs::read_to_string(&trace).unwrap().starts_with("step\tloss\n0\t"));
        }
    }
    let rec = dir.path().join("rec.emb");
    let r = lexforge(&["reconstruct", "--model", p(&model), "--vocab", p(&v), "--out", p(&rec)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let emb = Embeddings::load(&rec).unwrap();
    assert_eq!(emb.matrix.shape(), (16, 6));
    assert!(dir.path().join("rec.emb.manifest.json").exists());

    let r = lexforge(&["script-report", "--model", p(&model), "--vocab", p(&v)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let total: usize = r
        .stdout
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 11);

    // a vocabulary that does not match the model is a data error
    let other = write_vocab(dir.path(), "o.vocab", &["a", "b", "c", "##d", "дом", "ка", "x", "y", "z", "q", "v"]);
    let r = lexforge(&["reconstruct", "--model", p(&model), "--vocab", p(&other), "--out", p(&rec)]);
    assert_eq!(r.code, EXIT_DATA);
}

#[test]
fn seed_precedence_and_reproducibility() {
    let dir = TempDir::new().unwrap();
    let v = write_vocab(dir.path(), "v.vocab", &["a", "b", "c", "d", "e", "f", "g"]);
    let e = write_embeddings(dir.path(), "e.txt", &v, 5, 2);
    let run_with = |name: &str, extra: &[&str], env: Option<&str>| {
        let out = dir.path().join(name);
        let mut args = vec!["factorize", "--embeddings", p(&e), "--method", "neural", "--clusters", "2", "--dim", "2", "--steps", "5", "--out", p(&out)];
        args.extend_from_slice(extra);
        let r = lexforge_env(&args, env);
        assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
        fs::read(&out).unwrap()
    };
    let default_a = run_with("a.mfac", &[], None);
    let default_b = run_with("b.mfac", &[], None);
    assert_eq!(default_a, default_b);
    assert_eq!(run_with("c.mfac", &["--seed", "42"], None), default_a);
    let env7 = run_with("d.mfac", &[], Some("7"));
    assert_ne!(env7, default_a);
    assert_eq!(run_with("e.mfac", &["--seed", "7"], None), env7);
    assert_eq!(run_with("f.mfac", &["--seed", "42"], Some("7")), default_a);

    let r = lexforge_env(&["param-budget", "--mode", "el"], Some("seven"));
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn el_lex_on_itself_copies_everything() {
    let dir = TempDir::new().unwrap();
    let v = write_vocab(dir.path(), "v.vocab", &["a", "b", "##c"]);
    let e = write_embeddings(dir.path(), "e.txt", &v, 4, 3);
    let out = dir.path().join("new.emb");
    let r = lexforge(&[
        "init-embeddings", "--strategy", "el-lex", "--new-vocab", p(&v), "--base-vocab", p(&v),
        "--base-embeddings", p(&e), "--format", "text", "--out", p(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&e).unwrap());

    let r = lexforge(&["init-embeddings", "--strategy", "el-rand", "--new-vocab", p(&v), "--base-vocab", p(&v), "--out", p(&out)]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn mf_pipeline_with_shared_up_projections() {
    let dir = TempDir::new().unwrap();
    let base_v = write_vocab(dir.path(), "base.vocab", &["a", "b", "c", "d", "e", "f", "g", "h"]);
    let new_v = write_vocab(dir.path(), "new.vocab", &["a", "b", "zz", "yy"]);
    let e = write_embeddings(dir.path(), "e.txt", &base_v, 5, 4);
    let base_model = dir.path().join("base.mfac");
    let r = lexforge(&[
        "factorize", "--embeddings", p(&e), "--method", "kmeans", "--clusters", "2", "--dim", "2", "--steps", "30",
        "--out", p(&base_model),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);

    let init = dir.path().join("new.mfac");
    let r = lexforge(&[
        "init-embeddings", "--strategy", "mf-lex", "--new-vocab", p(&new_v), "--base-vocab", p(&base_v),
        "--base-model", p(&base_model), "--exclude-up-projections", "--out", p(&init),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(fs::metadata(&init).unwrap().len() < fs::metadata(&base_model).unwrap().len());

    let target = write_embeddings(dir.path(), "target.txt", &new_v, 5, 5);
    let fitted = dir.path().join("fitted.mfac");
    let fit_args = [
        "fit-target", "--model", p(&init), "--target", p(&target), "--steps", "40", "--out", p(&fitted),
    ];
    let r = lexforge(&fit_args);
    assert_eq!(r.code, EXIT_USAGE, "missing base model should be a usage error");
    let mut with_base = fit_args.to_vec();
    with_base.extend_from_slice(&["--base-model", p(&base_model)]);
    let r = lexforge(&with_base);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stderr.contains("loss"));

    let rec = dir.path().join("rec.txt");
    let r = lexforge(&[
        "reconstruct", "--model", p(&fitted), "--vocab", p(&new_v), "--format", "text", "--out", p(&rec),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
}

#[test]
fn param_budget_and_stack_config() {
    let r = lexforge(&["param-budget", "--mode", "mf"]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.stdout.ends_with("total\t1100000\n"), "{}", r.stdout);
    let r = lexforge(&["param-budget", "--mode", "el", "--v-new", "10000", "--d", "768"]);
    assert!(r.stdout.ends_with("total\t7680000\n"));

    let r = lexforge(&["stack-config", "--layers", "12", "--variant", "madx2"]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(
        r.stdout,
        "{\"num_layers\":12,\"variant\":\"MAD-X-2.0\",\"adapter_layers\":[1,2,3,4,5,6,7,8,9,10,11]}\n"
    );
    let r = lexforge(&["stack-config", "--layers", "0"]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn exit_codes() {
    assert_eq!(lexforge(&["--help"]).code, EXIT_OK);
    assert_eq!(lexforge(&["--version"]).code, EXIT_OK);
    assert_eq!(lexforge(&[]).code, EXIT_USAGE);
    assert_eq!(lexforge(&["no-such-command"]).code, EXIT_USAGE);
    assert_eq!(lexforge(&["analyze", "--target", "x"]).code, EXIT_USAGE);
    let r = lexforge(&["analyze", "--target", "/nonexistent/a", "--base", "/nonexistent/b"]);
    assert_eq!(r.code, EXIT_DATA);
    assert!(r.stderr.starts_with("error:"));

    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.vocab");
    fs::write(&bad, "a\na\n").unwrap();
    assert_eq!(lexforge(&["analyze", "--target", p(&bad), "--base", p(&bad)]).code, EXIT_DATA);
}

#[test]
fn divergence_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let v = write_vocab(dir.path(), "v.vocab", &["a", "b", "c", "d", "e"]);
    let vocab = Vocabulary::load(&v).unwrap();
    let m = Matrix::from_fn(vocab.len(), 4, |i, j| ((i * 7 + j * 3) % 11) as f32 * 100.0);
    let e = dir.path().join("e.txt");
    Embeddings::for_vocab(&vocab, m).unwrap().save(&e, EmbeddingFormat::Text).unwrap();
    let r = lexforge(&[
        "factorize", "--embeddings", p(&e), "--method", "neural", "--clusters", "2", "--dim", "2", "--steps", "500",
        "--lr", "10", "--out", p(&dir.path().join("m.mfac")),
    ]);
    assert_eq!(r.code, EXIT_NUMERICAL, "{}", r.stderr);
    assert!(r.stderr.contains("diverged at step"));
}
