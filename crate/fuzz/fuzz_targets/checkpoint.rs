#![no_main]
use dpmood::modelzoo::{decode_checkpoint, encode_checkpoint, Model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = decode_checkpoint(data) else {
        return;
    };
    // compare bytes, since NaN weights are not equal to themselves
    let bytes = encode_checkpoint(&ckpt);
    let again = decode_checkpoint(&bytes).expect("encoded checkpoint decodes");
    assert_eq!(encode_checkpoint(&again), bytes);
    let _ = Model::from_checkpoint(&ckpt);
});
