//! Size arithmetic for layers, levels and base sets. All logarithms are
//! base 2 and rounded up so every size is integral.

use super::PqError;

/// `8^j`.
pub fn pow8(j: usize) -> usize {
    1usize << (3 * j)
}

/// `ceil(log2(x / block))`, at least 1.
pub fn ceil_log2_ratio(x: usize, block: usize) -> usize {
    let mut k = 0;
    while block.saturating_mul(1 << k) < x {
        k += 1;
    }
    k.max(1)
}

/// Size of a layer's base sets and of the layer below it:
/// `B * ceil(log2(X / B))`.
pub fn phi(x: usize, block: usize) -> usize {
    block * ceil_log2_ratio(x, block)
}

/// Layer sizes from largest to smallest, excluding the head.
///
/// Starts at `n` and repeatedly applies `X -> phi(X)` until the next size
/// would fit in `c*B`. Trailing layers too small to hold a level
/// (`X < 5 * max(phi(X), c*B)`) are dropped and their keys go to the head.
/// Returns an empty plan when `n <= 2cB`.
pub fn compute_layer_plan(n: usize, block: usize, c: usize) -> Vec<usize> {
    let cb = c * block;
    if n <= 2 * cb || n < 5 * phi(n, block) {
        return Vec::new();
    }
    let mut plan = vec![n];
    loop {
        let next = phi(*plan.last().expect("non-empty"), block);
        if next <= cb {
            break;
        }
        plan.push(next);
    }
    while plan.len() > 1 {
        let last = *plan.last().expect("non-empty");
        if last < 5 * phi(last, block).max(cb) {
            plan.pop();
        } else {
            break;
        }
    }
    plan
}

/// A plan with caller-chosen lower layers, for exercising multi-layer code
/// at sizes where the natural plan has a single layer. Entries that do not
/// shrink by at least 4x, that fit the head, or that are too small for a
/// level end the plan.
pub fn forced_layer_plan(n: usize, block: usize, c: usize, lower: &[usize]) -> Vec<usize> {
    let cb = c * block;
    if n <= 2 * cb || n < 5 * phi(n, block) {
        return Vec::new();
    }
    let mut plan = vec![n];
    for &x in lower {
        let prev = *plan.last().expect("non-empty");
        if x * 4 > prev || x <= 2 * cb || x < 5 * phi(x, block) {
            break;
        }
        plan.push(x);
    }
    plan
}

/// The largest `l` with `phi * (1 + sum_{j<=l} 4*8^j) <= x`.
pub fn compute_top_level(x: usize, phi: usize) -> Result<usize, PqError> {
    if x < 5 * phi {
        return Err(PqError::Config(format!(
            "layer too small for levels: {x} < 5 * {phi}"
        )));
    }
    let mut l = 0;
    let mut sum = 1 + 4;
    loop {
        let next = sum + 4 * pow8(l + 1);
        if phi * next > x {
            return Ok(l);
        }
        sum = next;
        l += 1;
    }
}

/// Cut `n` sorted keys into pieces of `phi`; a trailing remainder of at
/// most `phi/2` joins its predecessor.
pub fn cut_sizes(n: usize, phi: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    if n <= phi {
        return vec![n];
    }
    let mut sizes = vec![phi; n / phi];
    let rem = n % phi;
    if rem > 0 {
        if 2 * rem <= phi {
            *sizes.last_mut().expect("n > phi") += rem;
        } else {
            sizes.push(rem);
        }
    }
    sizes
}

/// Number of base sets per level when a layer is built from `sets` base
/// sets: level `j` takes `4*8^j` while more than `36*8^j` remain; the rest
/// form the top level.
pub fn level_groups(sets: usize) -> Vec<usize> {
    let mut groups = Vec::new();
    let mut left = sets;
    let mut j = 0;
    while left > 36 * pow8(j) {
        groups.push(4 * pow8(j));
        left -= 4 * pow8(j);
        j += 1;
    }
    groups.push(left);
    groups
}

/// Size bounds `(low, high)` of level `j` when `top` is the top level.
pub fn level_bounds(j: usize, top: usize, phi: usize) -> (usize, usize) {
    if j == top {
        (2 * pow8(j) * phi, 40 * pow8(j) * phi)
    } else {
        (2 * pow8(j) * phi, 6 * pow8(j) * phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_values() {
        assert_eq!(phi(1000, 16), 96);
        assert_eq!(phi(1 << 20, 16), 256);
        assert_eq!(phi(320, 16), 80);
        assert_eq!(phi(17, 16), 16);
    }

    #[test]
    fn plan_examples() {
        assert_eq!(compute_layer_plan(1 << 24, 16, 17), vec![1 << 24]);
        assert_eq!(compute_layer_plan(544, 16, 17), Vec::<usize>::new());
        assert_eq!(compute_layer_plan(545, 16, 17), vec![545]);
        assert_eq!(
            compute_layer_plan((1usize << 30) * 16, 16, 17),
            vec![(1usize << 30) * 16]
        );
        assert_eq!(compute_layer_plan(1000, 16, 17), vec![1000]);
    }

    #[test]
    fn natural_plans_have_one_layer_at_any_machine_size() {
        for block in [2usize, 4, 16, 64] {
            let mut n = 2 * 17 * block + 1;
            while n < usize::MAX / 4 {
                assert!(
                    compute_layer_plan(n, block, 17).len() <= 1,
                    "n {n} B {block}"
                );
                n = n * 3 / 2;
            }
        }
    }

    #[test]
    fn forced_plan_filters() {
        assert_eq!(
            forced_layer_plan(1 << 16, 16, 17, &[4000, 900]),
            vec![1 << 16, 4000, 900]
        );
        assert_eq!(
            forced_layer_plan(1 << 16, 16, 17, &[4000, 2000]),
            vec![1 << 16, 4000]
        );
        assert_eq!(forced_layer_plan(2000, 16, 17, &[4000]), vec![2000]);
        assert_eq!(forced_layer_plan(500, 16, 17, &[100]), Vec::<usize>::new());
    }

    #[test]
    fn top_level_examples() {
        assert_eq!(compute_top_level(5, 1).unwrap(), 0);
        assert_eq!(compute_top_level(36, 1).unwrap(), 0);
        assert_eq!(compute_top_level(37, 1).unwrap(), 1);
        assert_eq!(compute_top_level(52428, 1).unwrap(), 4);
        assert!(compute_top_level(4, 1).is_err());
    }

    #[test]
    fn top_level_fits_between_capacity_bounds() {
        for ratio in 5..200_000usize {
            let l = compute_top_level(ratio, 1).unwrap();
            assert!(
                4 * pow8(l) <= ratio && ratio <= 40 * pow8(l),
                "ratio {ratio} l {l}"
            );
        }
    }

    #[test]
    fn cut_examples() {
        let p = 96;
        assert_eq!(cut_sizes(2 * p + 1, p), vec![p, p + 1]);
        assert_eq!(cut_sizes(3 * p + p / 4, p), vec![p, p, p + p / 4]);
        assert_eq!(cut_sizes(1000, 96), [vec![96; 9], vec![136]].concat());
        assert_eq!(cut_sizes(96 + 49, 96), vec![96, 49]);
        assert_eq!(cut_sizes(10, 96), vec![10]);
        assert_eq!(cut_sizes(0, 96), Vec::<usize>::new());
    }

    #[test]
    fn level_group_examples() {
        assert_eq!(level_groups(9), vec![9]);
        assert_eq!(level_groups(36), vec![36]);
        assert_eq!(level_groups(37), vec![4, 33]);
        assert_eq!(level_groups(4095), vec![4, 32, 256, 3803]);
    }
}
