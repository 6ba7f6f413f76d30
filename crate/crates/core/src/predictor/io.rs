use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Activation, Layout};
use super::{check_budget, MetricSchema, PredictorError, PredictorModel};
use crate::text_features::{CharNgramModel, FeatureNormalization, FEATURE_DIM, FEATURE_NAMES};

pub const MODEL_SCHEMA: &str = "model.v1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    d_e: usize,
    d_c: usize,
    layer_sizes: Vec<usize>,
    activation: Activation,
    feature_norm: FeatureNormalization,
    metric_schema: MetricSchema,
    params: Vec<f64>,
    param_count: usize,
    #[serde(default)]
    char_lm: Option<CharNgramModel>,
}

#[derive(Deserialize)]
struct SchemaProbe {
    schema: String,
}

fn format_err(msg: impl Into<String>) -> PredictorError {
    PredictorError::Format(msg.into())
}

pub fn save_model(model: &PredictorModel, path: impl AsRef<Path>) -> Result<(), PredictorError> {
    let file = ModelFile {
        schema: MODEL_SCHEMA.into(),
        d_e: model.layout.d_e,
        d_c: model.layout.d_c,
        layer_sizes: model.layout.layer_sizes.clone(),
        activation: model.activation,
        feature_norm: model.feature_norm.clone(),
        metric_schema: model.metric_schema.clone(),
        params: model.params.clone(),
        param_count: model.params.len(),
        char_lm: model.char_lm.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file).map_err(|e| format_err(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PredictorModel, PredictorError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_model(&text)
}

pub(crate) fn parse_model(text: &str) -> Result<PredictorModel, PredictorError> {
    let probe: SchemaProbe = serde_json::from_str(text).map_err(|e| format_err(e.to_string()))?;
    if probe.schema != MODEL_SCHEMA {
        return Err(PredictorError::VersionMismatch {
            found: probe.schema,
            expected: MODEL_SCHEMA.into(),
        });
    }
    let file: ModelFile = serde_json::from_str(text).map_err(|e| format_err(e.to_string()))?;

    if file.layer_sizes.len() < 2 || file.layer_sizes.contains(&0) {
        return Err(format_err("layer_sizes needs at least input and output widths"));
    }
    if file.layer_sizes[0] != file.d_e + file.d_c + 1 {
        return Err(format_err(format!(
            "input width {} does not equal d_e + d_c + 1 = {}",
            file.layer_sizes[0],
            file.d_e + file.d_c + 1
        )));
    }
    file.metric_schema.validate()?;
    if *file.layer_sizes.last().unwrap() != file.metric_schema.len() {
        return Err(format_err("output width does not match the metric schema"));
    }
    let names_ok = file.feature_norm.names.len() == FEATURE_DIM
        && file.feature_norm.names.iter().zip(FEATURE_NAMES).all(|(a, b)| a == b);
    if !names_ok || file.feature_norm.means.len() != FEATURE_DIM || file.feature_norm.stds.len() != FEATURE_DIM {
        return Err(format_err("feature normalization does not match the feature schema"));
    }
    let layout = Layout::from_sizes(file.d_e, file.d_c, FEATURE_DIM, file.layer_sizes);
    if file.param_count != layout.total || file.params.len() != layout.total {
        return Err(format_err(format!(
            "layout needs {} parameters, file declares {} and holds {}",
            layout.total,
            file.param_count,
            file.params.len()
        )));
    }
    check_budget(layout.total)?;
    if !file.params.iter().all(|p| p.is_finite()) {
        return Err(format_err("non-finite parameter"));
    }
    Ok(PredictorModel {
        layout,
        activation: file.activation,
        feature_norm: file.feature_norm,
        metric_schema: file.metric_schema,
        params: file.params,
        char_lm: file.char_lm,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::predictor::tests::schema;
    use crate::predictor::{predict, JointRepresentation};
    use crate::text_features::train_char_lm;

    fn model() -> PredictorModel {
        let mut m = PredictorModel::initialize(10, 3, &[9, 4], schema(2), FeatureNormalization::identity(), 17)
            .unwrap();
        m.set_char_lm(train_char_lm(&["a red car"], 3, 0.1).unwrap());
        m
    }

    #[test]
    fn roundtrip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = model();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let h = JointRepresentation {
                vector: (0..m.input_dim()).map(|_| rng.random_range(-3.0..3.0)).collect(),
            };
            let a = predict(&m, &h).unwrap();
            let b = predict(&back, &h).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(PredictorError::Format(_))));
    }

    #[test]
    fn older_schema_is_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replacen("model.v1", "model.v0", 1);
        assert!(matches!(
            parse_model(&text),
            Err(PredictorError::VersionMismatch { found, .. }) if found == "model.v0"
        ));
    }

    #[test]
    fn inconsistent_param_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = model();
        save_model(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replace(
            &format!("\"param_count\":{}", m.param_count()),
            &format!("\"param_count\":{}", m.param_count() + 1),
        );
        assert!(matches!(parse_model(&tampered), Err(PredictorError::Format(_))));
    }
}
