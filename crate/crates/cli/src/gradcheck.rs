use clap::{Args, ValueEnum};
use feddrift::federation::{Ablation, AlgoConfig, Algorithm, ClientState, LocalObjective, ServerState};
use feddrift::math::{finite_diff_grad, ParamVector, Purpose, RngStream};
use feddrift::models::{init_params, loss, loss_and_grad, Activation, Batch, ModelSpec};

use crate::CliError;

const TOLERANCE: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;
const BATCH: usize = 6;
const STEPS: usize = 7;

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Logistic,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Nonlinearity {
    Relu,
    Tanh,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "mlp")]
    model: Model,
    #[arg(long, default_value_t = 8)]
    input_dim: usize,
    /// Hidden layer widths for the MLP, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "6,5")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Hidden-layer activation for the MLP.
    #[arg(long, value_enum, default_value = "relu")]
    activation: Nonlinearity,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb the analytic gradients; the check must then fail.
    #[arg(long, hide = true)]
    corrupt: bool,
}

/// Max over coordinates of `|a - f| / max(1, |a|)`.
fn max_rel_error(analytic: &ParamVector, fd: &ParamVector) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(fd.as_slice())
        .map(|(a, f)| (a - f).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn random_vector(len: usize, scale: f64, stream: RngStream) -> ParamVector {
    let mut rng = stream.open();
    ParamVector::new((0..len).map(|_| scale * rng.gaussian()).collect()).expect("finite")
}

fn corrupt(g: ParamVector, on: bool) -> ParamVector {
    if !on {
        return g;
    }
    let mut v = g.into_vec();
    v[0] += 1e-3 * v[0].abs().max(1.0);
    ParamVector::new(v).expect("finite")
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let spec = match args.model {
        Model::Logistic => ModelSpec::logistic(args.input_dim, args.classes),
        Model::Mlp => ModelSpec::mlp(args.input_dim, args.hidden.clone(), args.classes)
            .with_activation(match args.activation {
                Nonlinearity::Relu => Activation::Relu,
                Nonlinearity::Tanh => Activation::Tanh,
            }),
    }
    .with_weight_decay(args.weight_decay);
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let p = spec.param_count();
    let key = |i: usize| RngStream::keyed(args.seed, Purpose::Test, i, 0);

    let inputs = random_vector(BATCH * args.input_dim, 1.0, key(0)).into_vec();
    let mut rng = key(1).open();
    let labels: Vec<usize> = (0..BATCH).map(|_| (rng.uniform01() * args.classes as f64) as usize % args.classes).collect();
    let batch = Batch::new(inputs, labels, args.input_dim)?;
    let view = batch.view();
    let theta = init_params(&spec, key(2))?.add(&random_vector(p, 0.1, key(3)))?;

    let (_, g) = loss_and_grad(&spec, &theta, &view)?;
    let fd = finite_diff_grad(|t| loss(&spec, t, &view).unwrap_or(f64::NAN), &theta, FD_STEP)?;
    let model_err = max_rel_error(&corrupt(g, args.corrupt), &fd);

    // Full FedDC objective with every correction term switched on and
    // random client and server state.
    let algorithm = Algorithm::feddc(0.3, Ablation::Lelglp);
    let cfg = AlgoConfig::new(algorithm, 0.05, 1, BATCH);
    let global = random_vector(p, 0.5, key(4));
    let mut server = ServerState::new(global.clone(), 1, args.seed, &algorithm);
    server.global_delta = Some(random_vector(p, 0.1, key(5)));
    let mut client = ClientState::new(0, BATCH, &global, &algorithm);
    client.drift = Some(random_vector(p, 0.2, key(6)));
    client.last_delta = Some(random_vector(p, 0.1, key(7)));
    let objective = LocalObjective::new(&client, &server, &cfg, STEPS)?;
    let g = objective.grad(&spec, &theta, &view)?;
    let fd = finite_diff_grad(|t| objective.value(&spec, t, &view).unwrap_or(f64::NAN), &theta, FD_STEP)?;
    let feddc_err = max_rel_error(&corrupt(g, args.corrupt), &fd);

    println!("parameters:           {p}");
    println!("model loss max rel err:      {model_err:.3e}");
    println!("FedDC objective max rel err: {feddc_err:.3e}");
    if model_err < TOLERANCE && feddc_err < TOLERANCE {
        println!("PASS (tolerance {TOLERANCE:e})");
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient check failed (tolerance {TOLERANCE:e})")))
    }
}
