use crate::error::{Error, Result};

/// Teacher-forcing fertility targets for a source of length `s` and a
/// gold/pseudo explanation of length `t`.
///
/// With a gold alignment (one source index per explanation token) the
/// fertility of each source position is the number of explanation tokens
/// aligned to it, clipped to `f_max` with overflow spilled rightward
/// (wrapping to leftover slack from the left if the right side is full).
/// Without one, `t` is split as evenly as possible: `t / s` everywhere
/// plus one for the first `t % s` positions. Always sums to `t`.
pub fn target_fertility(
    s: usize,
    t: usize,
    alignment: Option<&[usize]>,
    f_max: usize,
) -> Result<Vec<usize>> {
    if s == 0 || t == 0 {
        return Err(Error::EmptyInput);
    }
    if t > s * f_max {
        return Err(Error::InfeasibleLength {
            source_len: s,
            target_len: t,
            f_max,
        });
    }
    let usable = alignment.filter(|a| a.len() == t && a.iter().all(|&i| i < s));
    match usable {
        Some(align) => {
            let mut f = vec![0usize; s];
            for &i in align {
                f[i] += 1;
            }
            let mut carry = 0usize;
            for v in f.iter_mut() {
                *v += carry;
                carry = v.saturating_sub(f_max);
                *v = (*v).min(f_max);
            }
            // right side full: drop the remainder into leftover slack
            let mut i = 0;
            while carry > 0 {
                let slack = f_max - f[i];
                let take = slack.min(carry);
                f[i] += take;
                carry -= take;
                i += 1;
            }
            Ok(f)
        }
        None => {
            let base = t / s;
            let rem = t % s;
            Ok((0..s).map(|i| base + usize::from(i < rem)).collect())
        }
    }
}
