//! Exercise the C ABI the way a foreign binding would: through the
//! extern "C" functions, opaque handles and error codes only.

use std::ffi::{CStr, CString};
use std::ptr;

use mlmlab_ffi::*;

fn tmpdir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("mlmlab_ffi").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn write_corpus(dir: &std::path::Path) -> std::path::PathBuf {
    let text =
        "the cat saw the dog .\nthe dog ate wild honey !\nevery king loves the old garden .\n"
            .repeat(30);
    let path = dir.join("corpus.txt");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn version_is_a_c_string() {
    let v = mlmlab_version();
    assert!(!v.is_null());
    let s = unsafe { CStr::from_ptr(v) }.to_str().unwrap();
    assert!(s.contains('.'));
}

#[test]
fn null_arguments_are_usage_errors_with_messages() {
    let mut out: *mut MlVocab = ptr::null_mut();
    let status = unsafe { mlmlab_vocab_train(ptr::null(), 64, 0, &mut out) };
    assert_eq!(status, MlStatus::MlmlabStatusUsage);
    let msg = mlmlab_last_error();
    assert!(!msg.is_null());
    let text = unsafe { CStr::from_ptr(msg) }.to_str().unwrap().to_string();
    mlmlab_string_free(msg);
    assert!(text.contains("NULL"), "{text}");
}

#[test]
fn missing_file_is_a_data_error() {
    let mut out: *mut MlVocab = ptr::null_mut();
    let path = CString::new("/nonexistent/corpus.txt").unwrap();
    let status = unsafe { mlmlab_vocab_train(path.as_ptr(), 64, 0, &mut out) };
    assert_eq!(status, MlStatus::MlmlabStatusData);
}

#[test]
fn vocab_tokenize_corpus_evaluate_round_trip() {
    let dir = tmpdir("roundtrip");
    let corpus_path = write_corpus(&dir);

    // vocabulary
    let mut vocab: *mut MlVocab = ptr::null_mut();
    let c = cpath(&corpus_path);
    let status = unsafe { mlmlab_vocab_train(c.as_ptr(), 96, 0, &mut vocab) };
    assert_eq!(status, MlStatus::MlmlabStatusOk);
    let mono = mlmlab_vocab_mono_size(vocab);
    assert_eq!(mono, 96);
    assert_eq!(mlmlab_vocab_total_size(vocab), 192);

    // save + load round trip
    let vpath = dir.join("vocab.txt");
    let vc = cpath(&vpath);
    assert_eq!(
        unsafe { mlmlab_vocab_save(vocab, vc.as_ptr()) },
        MlStatus::MlmlabStatusOk
    );
    let mut vocab2: *mut MlVocab = ptr::null_mut();
    assert_eq!(
        unsafe { mlmlab_vocab_load(vc.as_ptr(), &mut vocab2) },
        MlStatus::MlmlabStatusOk
    );
    assert_eq!(mlmlab_vocab_total_size(vocab2), 192);

    // tokenize in both languages; fake ids are shifted by mono
    let text = CString::new("the cat saw the dog").unwrap();
    let mut len = 0usize;
    assert_eq!(
        unsafe { mlmlab_tokenize(vocab, text.as_ptr(), 0, ptr::null_mut(), 0, &mut len) },
        MlStatus::MlmlabStatusOk
    );
    assert!(len >= 5);
    let mut eng = vec![0u32; len];
    let mut fake = vec![0u32; len];
    unsafe {
        assert_eq!(
            mlmlab_tokenize(vocab, text.as_ptr(), 0, eng.as_mut_ptr(), len, &mut len),
            MlStatus::MlmlabStatusOk
        );
        assert_eq!(
            mlmlab_tokenize(vocab, text.as_ptr(), 1, fake.as_mut_ptr(), len, &mut len),
            MlStatus::MlmlabStatusOk
        );
    }
    for (e, f) in eng.iter().zip(&fake) {
        assert_eq!(f - e, mono);
    }
    // bad lang code
    let mut l2 = 0usize;
    assert_eq!(
        unsafe { mlmlab_tokenize(vocab, text.as_ptr(), 7, ptr::null_mut(), 0, &mut l2) },
        MlStatus::MlmlabStatusUsage
    );

    // corpus prepare + save/load
    let mut corpus: *mut MlCorpus = ptr::null_mut();
    assert_eq!(
        unsafe { mlmlab_corpus_prepare(vocab, c.as_ptr(), 0, 0, &mut corpus) },
        MlStatus::MlmlabStatusOk
    );
    assert_eq!(mlmlab_corpus_len(corpus, 0), 90);
    assert_eq!(mlmlab_corpus_len(corpus, 1), 90);
    let apath = dir.join("corpus.bin");
    let ac = cpath(&apath);
    assert_eq!(
        unsafe { mlmlab_corpus_save(corpus, ac.as_ptr()) },
        MlStatus::MlmlabStatusOk
    );
    let mut corpus2: *mut MlCorpus = ptr::null_mut();
    assert_eq!(
        unsafe { mlmlab_corpus_load(ac.as_ptr(), &mut corpus2) },
        MlStatus::MlmlabStatusOk
    );
    assert_eq!(mlmlab_corpus_len(corpus2, 0), 90);

    mlmlab_corpus_free(corpus);
    mlmlab_corpus_free(corpus2);
    mlmlab_vocab_free(vocab);
    mlmlab_vocab_free(vocab2);
}

#[test]
fn kendall_tau_through_the_abi() {
    let identity = [0u32, 1, 2, 3, 4];
    let mut v = 0.0f64;
    assert_eq!(
        unsafe { mlmlab_kendall_tau(identity.as_ptr(), 5, &mut v) },
        MlStatus::MlmlabStatusOk
    );
    assert_eq!(v, 1.0);
    let reversed = [4u32, 3, 2, 1, 0];
    unsafe { mlmlab_kendall_tau(reversed.as_ptr(), 5, &mut v) };
    assert_eq!(v, 0.0);
    let bad = [0u32, 0, 2];
    assert_eq!(
        unsafe { mlmlab_kendall_tau(bad.as_ptr(), 3, &mut v) },
        MlStatus::MlmlabStatusData
    );
}

#[test]
fn unknown_experiment_id_is_usage_error() {
    let id = CString::new("banana").unwrap();
    let out_dir = cpath(&tmpdir("exp"));
    let status = unsafe {
        mlmlab_run_experiment(
            id.as_ptr(),
            ptr::null(),
            out_dir.as_ptr(),
            ptr::null(),
            0,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, MlStatus::MlmlabStatusUsage);
}
