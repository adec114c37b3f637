use cfseries::datasets::{gen_synthetic, standardize};
use cfseries::metrics::CfFunction;
use cfseries::models::{train, ArchitectureSpec, ModelKind, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let lambda: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let (ds, scale) = standardize(&gen_synthetic(3000, 7, false)).unwrap();
    let mut arch = ArchitectureSpec::new(ds.t1, ds.t2);
    arch.conv_channels = (8, 16);
    arch.cond_embed = 16;
    arch.kernel = 4;
    arch.latent_dim = 10;
    let cfg = TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: lr,
        reg_weight: lambda,
        ramp_fraction: 0.15,
        eval_every: 100,
        seed: 0,
    };
    let out = train(ModelKind::Cepae, arch, &ds.samples[..2400], &ds.samples[2400..], &cfg).unwrap();
    for (e, v) in &out.report.val_curve {
        println!("val epoch {e}: cf MAE {v:.4}");
    }
    let m = &out.best;
    // decomposition on the held-out split
    let mut rec_mae = 0.0;
    let mut cf_mae = 0.0;
    let mut delta_sum = [0.0f64; 2]; // mean (yhat_cf - y_f) per factual class
    let mut delta_cnt = [0.0f64; 2];
    let mut resid_mae = 0.0; // cf error after removing the per-sample mean shift
    let mut n = 0.0;
    for s in &ds.samples[2400..] {
        let rec = m.cf(&s.y, &s.h, s.e, s.e).unwrap();
        rec_mae += rec.iter().zip(&s.y).map(|(a, b)| (a - b).abs()).sum::<f64>() / 10.0;
        let cf = m.cf(&s.y, &s.h, s.e, 1 - s.e).unwrap();
        let t = s.y_cf.as_ref().unwrap();
        cf_mae += cf.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / 10.0;
        let d = cf.iter().zip(&s.y).map(|(a, b)| a - b).sum::<f64>() / 10.0;
        delta_sum[s.e as usize] += d;
        delta_cnt[s.e as usize] += 1.0;
        let err_mean = cf.iter().zip(t).map(|(a, b)| a - b).sum::<f64>() / 10.0;
        resid_mae += cf.iter().zip(t).map(|(a, b)| (a - b - err_mean).abs()).sum::<f64>() / 10.0;
        n += 1.0;
    }
    let drop_std = 0.7 / scale.std;
    println!("test rec MAE {:.4}", rec_mae / n);
    println!("test cf MAE {:.4} (resid after mean shift {:.4})", cf_mae / n, resid_mae / n);
    println!(
        "mean applied shift: e=0->1 {:.4} (ideal {:.4}), e=1->0 {:.4} (ideal {:.4})",
        delta_sum[0] / delta_cnt[0],
        -drop_std,
        delta_sum[1] / delta_cnt[1],
        drop_std
    );
    println!("best epoch {:?}", out.report.best_epoch);
}
