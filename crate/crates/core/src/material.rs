use serde::{Deserialize, Serialize};

/// Three-term Sellmeier model, `n² = 1 + Σ B_i λ² / (λ² − C_i)` with λ in µm
/// and `C_i` in µm².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sellmeier {
    pub b: [f64; 3],
    pub c: [f64; 3],
}

impl Sellmeier {
    /// Fused silica (Malitson 1965).
    pub const FUSED_SILICA: Sellmeier = Sellmeier {
        b: [0.696_166_3, 0.407_942_6, 0.897_479_4],
        c: [0.068_404_3 * 0.068_404_3, 0.116_241_4 * 0.116_241_4, 9.896_161 * 9.896_161],
    };

    pub fn index(&self, wavelength_um: f64) -> f64 {
        let l2 = wavelength_um * wavelength_um;
        let sum: f64 = self.b.iter().zip(&self.c).map(|(b, c)| b * l2 / (l2 - c)).sum();
        (1.0 + sum).sqrt()
    }
}

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silica_reference_indices() {
        // Malitson reference: n(0.6328 µm) = 1.457 02, n(1.0 µm) = 1.450 42
        let s = Sellmeier::FUSED_SILICA;
        assert!((s.index(0.6328) - 1.45702).abs() < 2e-5);
        assert!((s.index(1.0) - 1.45042).abs() < 2e-5);
    }
}
