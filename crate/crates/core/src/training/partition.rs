//! Symmetric Dirichlet partitioning of samples across clients.

use rand_distr::{Distribution, Gamma};

use crate::error::TrainingError;

/// Redraws allowed before an empty client is reported as an error.
pub const MAX_PARTITION_RETRIES: usize = 100;

/// Splits samples among `n_clients`, stratum by stratum.
///
/// For each stratum (class) the proportions are drawn from
/// `Dirichlet(alpha · 1_N)` and that stratum's samples, shuffled, are cut
/// into consecutive runs of the corresponding sizes. The whole draw is
/// repeated when some client ends up empty. Every sample index appears in
/// exactly one returned set; each set is sorted.
pub fn dirichlet_partition<R: rand::Rng + ?Sized>(
    strata: &[usize],
    n_clients: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>, TrainingError> {
    if n_clients == 0 {
        return Err(TrainingError::Partition("need at least one client".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TrainingError::Partition(format!(
            "Dirichlet concentration must be positive, got {alpha}"
        )));
    }
    if strata.len() < n_clients {
        return Err(TrainingError::Partition(format!(
            "{} samples cannot fill {n_clients} clients",
            strata.len()
        )));
    }
    let n_strata = strata.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_stratum: Vec<Vec<usize>> = vec![Vec::new(); n_strata];
    for (i, &s) in strata.iter().enumerate() {
        by_stratum[s].push(i);
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| TrainingError::Partition(format!("Dirichlet sampler: {e}")))?;

    for _ in 0..=MAX_PARTITION_RETRIES {
        let mut clients: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for members in &by_stratum {
            if members.is_empty() {
                continue;
            }
            let mut members = members.clone();
            for i in (1..members.len()).rev() {
                let j = rng.random_range(0..=i);
                members.swap(i, j);
            }
            let mut weights: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            } else {
                // All draws underflowed (tiny alpha): give the stratum to one client.
                let pick = rng.random_range(0..n_clients);
                weights.iter_mut().enumerate().for_each(|(i, w)| *w = f64::from(i == pick));
            }
            // Cumulative cut points, rounded, so the sizes sum exactly.
            let n = members.len();
            let mut start = 0;
            let mut acc = 0.0;
            for (c, w) in weights.iter().enumerate() {
                acc += w;
                let end = if c + 1 == n_clients {
                    n
                } else {
                    ((acc * n as f64).round() as usize).clamp(start, n)
                };
                clients[c].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            for c in clients.iter_mut() {
                c.sort_unstable();
            }
            return Ok(clients);
        }
    }
    Err(TrainingError::Partition(format!(
        "a client stayed empty after {MAX_PARTITION_RETRIES} redraws (alpha = {alpha}, {n_clients} clients)"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn balanced(classes: usize, per: usize) -> Vec<usize> {
        (0..classes).flat_map(|c| std::iter::repeat_n(c, per)).collect()
    }

    #[test]
    fn partition_is_exact_cover() {
        let strata = balanced(10, 60);
        let parts = dirichlet_partition(&strata, 20, 0.3, &mut stream(1, Stream::Partition)).unwrap();
        let mut seen = vec![0; strata.len()];
        for p in &parts {
            assert!(!p.is_empty());
            for &i in p {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), strata.len());
    }

    #[test]
    fn large_alpha_matches_global_proportions() {
        let strata = balanced(4, 10_000);
        let parts =
            dirichlet_partition(&strata, 5, 1e6, &mut stream(2, Stream::Partition)).unwrap();
        for p in &parts {
            for c in 0..4 {
                let frac = p.iter().filter(|&&i| strata[i] == c).count() as f64 / p.len() as f64;
                assert!((frac - 0.25).abs() < 0.01, "class {c} fraction {frac}");
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let strata = balanced(10, 30);
        let a = dirichlet_partition(&strata, 8, 0.3, &mut stream(3, Stream::Partition)).unwrap();
        let b = dirichlet_partition(&strata, 8, 0.3, &mut stream(3, Stream::Partition)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let strata = balanced(2, 2);
        let mut rng = stream(0, Stream::Partition);
        assert!(dirichlet_partition(&strata, 0, 1.0, &mut rng).is_err());
        assert!(dirichlet_partition(&strata, 2, 0.0, &mut rng).is_err());
        assert!(dirichlet_partition(&strata, 5, 1.0, &mut rng).is_err());
        // One sample per client with a very skewed draw: retries run out.
        let one = vec![0usize; 3];
        assert!(dirichlet_partition(&one, 3, 1e-3, &mut rng).is_err());
    }
}
