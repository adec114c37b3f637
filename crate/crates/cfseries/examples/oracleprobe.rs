//! Trains the effectiveness pseudo-oracle on synthetic data and reports its
//! held-out factual accuracy plus its accuracy on ground-truth
//! counterfactual windows (labels flipped).

use cfseries::datasets::{gen_synthetic, standardize};
use cfseries::metrics::train_pseudo_oracle;

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(6000);
    let ds = gen_synthetic(n, 7, false);
    let (scaled, _) = standardize(&ds).unwrap();
    let split = n * 4 / 5;
    let oracle = train_pseudo_oracle(&scaled.samples[..split], 3, true, true).unwrap();
    println!("held-out factual accuracy {:.4}", oracle.accuracy);
    let mut correct = 0usize;
    let test = &scaled.samples[split..];
    for s in test {
        let cf = s.y_cf.as_ref().unwrap();
        if oracle.predict(&s.h, cf).unwrap() == 1 - s.e {
            correct += 1;
        }
    }
    println!(
        "ground-truth counterfactual accuracy {:.4} (n={})",
        correct as f64 / test.len() as f64,
        test.len()
    );

    // Closed-form references on the same anchored residuals.
    let detrend = |h: &[f64], y: &[f64], off: f64| -> Vec<f64> {
        let num: f64 = h.iter().enumerate().map(|(t, &x)| (x - off) * (t + 1) as f64).sum();
        let den: f64 = (1..=h.len()).map(|t| (t * t) as f64).sum::<f64>();
        let b = num / den;
        y.iter().enumerate().map(|(k, &x)| x - off - b * (h.len() + k + 1) as f64).collect()
    };
    let off: f64 = {
        let tr = &scaled.samples[..split];
        tr.iter().map(|s| {
            let h=&s.h; let n=h.len() as f64; let km=(h.len() as f64-1.0)/2.0;
            let xm=h.iter().sum::<f64>()/n;
            let mut num=0.0; let mut den=0.0;
            for (k,&x) in h.iter().enumerate(){let dk=k as f64-km; num+=dk*(x-xm); den+=dk*dk;}
            let b=num/den; xm-b*km
        }).sum::<f64>()/split as f64
    };
    let tr = &scaled.samples[..split];
    let mut m0=Vec::new(); let mut m1=Vec::new();
    for s in tr { let r=detrend(&s.h,&s.y,off); let m=r.iter().sum::<f64>()/r.len() as f64;
        if s.e==1 {m1.push(m)} else {m0.push(m)} }
    let mu0=m0.iter().sum::<f64>()/m0.len() as f64;
    let mu1=m1.iter().sum::<f64>()/m1.len() as f64;
    let thr=(mu0+mu1)/2.0;
    let mut cf_ok=0usize; let mut f_ok=0usize;
    for s in test {
        let r=detrend(&s.h,&s.y,off); let m=r.iter().sum::<f64>()/r.len() as f64;
        let pred= if m<thr {1u8} else {0u8};
        if pred==s.e {f_ok+=1;}
        let cf=s.y_cf.as_ref().unwrap();
        let r=detrend(&s.h,cf,off); let m=r.iter().sum::<f64>()/r.len() as f64;
        let pred= if m<thr {1u8} else {0u8};
        if pred==1-s.e {cf_ok+=1;}
    }
    println!("mean-threshold factual {:.4} cf {:.4}", f_ok as f64/test.len() as f64, cf_ok as f64/test.len() as f64);
    let d=10usize;
    let mut mu=[vec![0.0;d],vec![0.0;d]]; let mut cnt=[0usize;2];
    let feats: Vec<(Vec<f64>,u8)> = tr.iter().map(|s| (detrend(&s.h,&s.y,off), s.e)).collect();
    for (r,e) in &feats { for k in 0..d {mu[*e as usize][k]+=r[k];} cnt[*e as usize]+=1; }
    for c in 0..2 { for k in 0..d { mu[c][k]/=cnt[c] as f64; } }
    let mut cov=vec![vec![0.0;d];d];
    for (r,e) in &feats { let m=&mu[*e as usize];
        for i in 0..d { for j in 0..d { cov[i][j]+=(r[i]-m[i])*(r[j]-m[j]); } } }
    let nn=(feats.len()-2) as f64;
    for i in 0..d { for j in 0..d { cov[i][j]/=nn; } cov[i][i]+=1e-6; }
    let mut a=cov.clone(); let mut b:Vec<f64>=(0..d).map(|k| mu[1][k]-mu[0][k]).collect();
    for col in 0..d {
        let piv=(col..d).max_by(|&i,&j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col,piv); b.swap(col,piv);
        let p=a[col][col];
        for j in col..d { a[col][j]/=p; } b[col]/=p;
        for i in 0..d { if i!=col { let f=a[i][col]; for j in col..d { a[i][j]-=f*a[col][j]; } b[i]-=f*b[col]; } }
    }
    let w=b;
    let proj=|r:&[f64]| -> f64 { r.iter().zip(&w).map(|(x,c)| x*c).sum() };
    let t=(proj(&mu[0])+proj(&mu[1]))/2.0;
    let mut f_ok=0usize; let mut cf_ok=0usize;
    for s in test {
        let r=detrend(&s.h,&s.y,off);
        let pred= if proj(&r)>t {1u8} else {0u8};
        if pred==s.e {f_ok+=1;}
        let cf=s.y_cf.as_ref().unwrap();
        let r=detrend(&s.h,cf,off);
        let pred= if proj(&r)>t {1u8} else {0u8};
        if pred==1-s.e {cf_ok+=1;}
    }
    println!("lda factual {:.4} cf {:.4}", f_ok as f64/test.len() as f64, cf_ok as f64/test.len() as f64);
}
