use super::ewc::check_len;
use super::memory::EpisodicMemory;
use crate::autodiff::ParameterVector;
use crate::error::{Error, Result};
use crate::model::SeqModel;

/// Result of projecting a gradient against the memory gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub grad: Vec<f64>,
    /// The constraint was active and the gradient was changed.
    pub projected: bool,
    /// The memory gradient was all zeros, so no constraint could be formed.
    pub degenerate_memory: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Closed-form solution of
/// `min ‖g − g̃‖²  s.t.  ⟨g̃, g_mem⟩ ≥ 0`.
///
/// When the constraint is violated the answer is the orthogonal projection
/// `g − (⟨g, g_mem⟩ / ‖g_mem‖²) g_mem`. Inner products within `1e-12` of zero
/// relative to `‖g‖‖g_mem‖` count as satisfied, which makes the projection
/// idempotent under floating-point roundoff.
pub fn gem_project(g: &[f64], g_mem: &[f64]) -> Result<Projection> {
    check_len("memory gradient", g.len(), g_mem.len())?;
    let mem_sq = dot(g_mem, g_mem);
    if mem_sq == 0.0 {
        return Ok(Projection {
            grad: g.to_vec(),
            projected: false,
            degenerate_memory: true,
        });
    }
    let inner = dot(g, g_mem);
    let tolerance = 1e-12 * (dot(g, g) * mem_sq).sqrt();
    if inner >= -tolerance {
        return Ok(Projection {
            grad: g.to_vec(),
            projected: false,
            degenerate_memory: false,
        });
    }
    let coef = inner / mem_sq;
    Ok(Projection {
        grad: g.iter().zip(g_mem).map(|(x, m)| x - coef * m).collect(),
        projected: true,
        degenerate_memory: false,
    })
}

/// Mean CTC gradient over every utterance stored in `memory`, all past tasks
/// pooled.
pub fn memory_gradient(model: &SeqModel, theta: &ParameterVector, memory: &EpisodicMemory) -> Result<Vec<f64>> {
    if memory.is_empty() {
        return Err(Error::Empty("episodic memory"));
    }
    Ok(model.mean_ctc_gradient(theta, memory.iter())?.grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inactive_constraint_returns_input() {
        let g = [0.3, 0.0];
        let m = [1.0, 5.0];
        assert_eq!(dot(&g, &m), 0.3);
        let p = gem_project(&g, &m).unwrap();
        assert_eq!(p.grad, g.to_vec());
        assert!(!p.projected);
    }

    #[test]
    fn full_opposition_gives_zero() {
        let m = [0.5, -2.0, 1.0];
        let g: Vec<f64> = m.iter().map(|v| -v).collect();
        let p = gem_project(&g, &m).unwrap();
        assert!(p.projected);
        assert!(p.grad.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn two_dimensional_case_against_grid_search() {
        let g = [1.0, -1.0];
        let m = [0.0, 1.0];
        let p = gem_project(&g, &m).unwrap();
        assert_eq!(p.grad, vec![1.0, 0.0]);
        assert_eq!(dot(&p.grad, &m), 0.0);

        // Every feasible point on a 0.01 grid over [-3,3]² is at least as far.
        let best = dist(&g, &p.grad);
        let mut min_grid = f64::INFINITY;
        for i in -300..=300 {
            for j in -300..=300 {
                let h = [i as f64 / 100.0, j as f64 / 100.0];
                if dot(&h, &m) >= 0.0 {
                    min_grid = min_grid.min(dist(&g, &h));
                }
            }
        }
        assert!(best <= min_grid + 1e-12);
        assert!((min_grid - best).abs() < 1e-12);
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_memory_gradient_is_flagged() {
        let p = gem_project(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(p.grad, vec![1.0, 2.0]);
        assert!(p.degenerate_memory);
    }

    #[test]
    fn layout_mismatch() {
        assert!(gem_project(&[1.0], &[1.0, 0.0]).is_err());
    }
}
