//! Focal loss, KL divergence, and their blend across beta and temperature.

use prefallkd::data::WindowLabel;
use prefallkd::train::{focal_loss, kd_loss, kl_div_loss, FocalConfig};

fn main() -> prefallkd::Result<()> {
    let focal = FocalConfig::default();
    let labels = [WindowLabel::PreImpactFall];
    for p in [0.1, 0.5, 0.9, 0.99] {
        println!("focal(p_fall = {p}) = {:.6}", focal_loss(&[p], &labels, &focal)?);
    }

    let student = vec![vec![0.5, 0.5]];
    let teacher = vec![vec![0.9, 0.1]];
    println!("KL(teacher || student) = {:.6}", kl_div_loss(&student, &teacher)?);

    println!("beta   T=1       T=2");
    for beta in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let t1 = kd_loss(&student, &teacher, &labels, beta, &focal, 1.0)?;
        let t2 = kd_loss(&student, &teacher, &labels, beta, &focal, 2.0)?;
        println!("{beta:<6} {t1:.6}  {t2:.6}");
    }
    Ok(())
}
