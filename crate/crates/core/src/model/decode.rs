use super::params::ModelParams;
use super::transformer::{encode_source, next_token_logits};
use crate::error::Result;

/// Greedy decoding: start from BOS and append the highest-scoring token
/// until EOS or `max_len` generated tokens. The returned ids include the
/// leading BOS (and the EOS, when one was produced).
pub fn greedy_decode(p: &ModelParams, src_ids: &[u32], max_len: usize) -> Result<Vec<u32>> {
    let enc = encode_source(p, src_ids)?;
    let limit = max_len.min(p.config.max_seq_len);
    let mut out = vec![p.config.bos_id];
    while out.len() <= limit {
        let logits = next_token_logits(p, &enc, &out);
        let row = logits.row(0);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        out.push(best as u32);
        if best as u32 == p.config.eos_id {
            break;
        }
    }
    Ok(out)
}
