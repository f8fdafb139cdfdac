//! Maps errors to process exit codes.

use twofold::predictor::PredictorError;
use twofold::{AnnulusError, MelnikovError, VerifyError};

use crate::config::ConfigError;

pub const CONFIG: u8 = 2;
pub const HYPOTHESIS: u8 = 3;
pub const NUMERICAL: u8 = 4;

fn annulus(e: &AnnulusError) -> u8 {
    match e {
        AnnulusError::HypothesisH1Violated(_)
        | AnnulusError::ZeroCountMismatch { .. }
        | AnnulusError::NotInRange { .. }
        | AnnulusError::DegenerateSlope { .. } => HYPOTHESIS,
        AnnulusError::OutsideAnnulus { .. } | AnnulusError::Flow(_) => NUMERICAL,
    }
}

fn melnikov(e: &MelnikovError) -> u8 {
    match e {
        MelnikovError::Annulus(a) => annulus(a),
        _ => NUMERICAL,
    }
}

fn predictor(e: &PredictorError) -> u8 {
    match e {
        PredictorError::Annulus(a) => annulus(a),
        PredictorError::Melnikov(m) => melnikov(m),
        _ => NUMERICAL,
    }
}

fn verify(e: &VerifyError) -> u8 {
    match e {
        VerifyError::Annulus(a) => annulus(a),
        VerifyError::Melnikov(m) => melnikov(m),
        VerifyError::Predictor(p) => predictor(p),
        _ => NUMERICAL,
    }
}

pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<AnnulusError>() {
            return annulus(e);
        }
        if let Some(e) = cause.downcast_ref::<MelnikovError>() {
            return melnikov(e);
        }
        if let Some(e) = cause.downcast_ref::<PredictorError>() {
            return predictor(e);
        }
        if let Some(e) = cause.downcast_ref::<VerifyError>() {
            return verify(e);
        }
    }
    NUMERICAL
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn nested_errors_keep_their_class() {
        let e: anyhow::Error =
            VerifyError::Predictor(PredictorError::Annulus(AnnulusError::NotInRange {
                sigma: 9.0,
                sigma_max: 3.0,
            }))
            .into();
        assert_eq!(code(&e), HYPOTHESIS);
        let e = Err::<(), _>(ConfigError::new("params", "bad"))
            .context("loading")
            .unwrap_err();
        assert_eq!(code(&e), CONFIG);
        let e: anyhow::Error = VerifyError::EpsilonList(1).into();
        assert_eq!(code(&e), NUMERICAL);
    }
}
