//! Expression-space size tables.

use std::fmt::Write as _;

use cvgp::combinatorics::count_exact;

pub const COUNT_HEADER: &str = "l,m,o,A,S,upper_bound,lower_bound_holds,upper_bound_holds";

/// One row per odd `l <= l_max` and each `m`, `o`, with exact integers.
pub fn table(l_max: usize, ms: &[usize], os: &[usize]) -> String {
    let mut s = format!("{COUNT_HEADER}\n");
    for &m in ms {
        for &o in os {
            for l in (1..=l_max).step_by(2) {
                let c = count_exact(l, m, o).expect("odd size");
                let _ = writeln!(
                    s,
                    "{l},{m},{o},{},{},{},{},{}",
                    c.a,
                    c.s,
                    c.upper_bound(),
                    c.lower_bound_holds(),
                    c.upper_bound_holds()
                );
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_table() {
        let t = table(3, &[2], &[2]);
        assert_eq!(
            t,
            format!("{COUNT_HEADER}\n1,2,2,3,3,1,true,false\n3,2,2,18,21,25,true,true\n")
        );
    }
}
