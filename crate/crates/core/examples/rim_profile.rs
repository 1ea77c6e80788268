use relightsplat::checkpoint::load_checkpoint;
use relightsplat::dataset::load_split;
use relightsplat::shading::*;
use relightsplat::trainer::render_view;

fn main() {
    let ckpt = load_checkpoint(std::path::Path::new("/tmp/run128_st/final.ckpt")).unwrap();
    let mut env = EnvironmentLight::new(ckpt.env_base.clone());
    env.prefilter(&PrefilterConfig::default());
    let test = load_split(std::path::Path::new("/tmp/sphere128"), "transforms_test.json").unwrap();
    let view = &test.views[0];
    let rendered = render_view(&ckpt.cloud, &env, &view.camera, &ShadeOptions::default()).unwrap();
    let gt = view.composited();

    // Worst pixels outside the gt mask.
    let mut worst: Vec<(f64, usize, usize)> = Vec::new();
    for y in 0..128usize { for x in 0..128usize {
        if view.alpha.get(x, y) > 0.01 { continue; }
        let e = (rendered.ldr.get(x, y) - gt.get(x, y)).length();
        worst.push((e, x, y));
    }}
    worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("worst outside-mask pixels:");
    for (e, x, y) in worst.iter().take(12) {
        let r = rendered.ldr.get(*x, *y);
        println!("  ({x:3},{y:3}) err {e:.3} A {:.3} ldr ({:.2},{:.2},{:.2})",
            rendered.gbuffer.alpha.get(*x, *y), r.x, r.y, r.z);
    }
    // How many outside pixels exceed thresholds, and the A histogram there.
    let (mut n02, mut n05) = (0, 0);
    let mut ahist = [0usize; 5];
    for (e, x, y) in &worst {
        if *e > 0.2 { n02 += 1; }
        if *e > 0.5 { n05 += 1; }
        if *e > 0.2 {
            let a = rendered.gbuffer.alpha.get(*x, *y);
            ahist[((a * 5.0) as usize).min(4)] += 1;
        }
    }
    println!("outside: err>0.2: {n02}, err>0.5: {n05}; A-hist of err>0.2: {ahist:?}");
    let y = 64;
    println!("scanline y=64:");
    for x in 12..24 {
        let r = rendered.ldr.get(x, y);
        println!("  x={x:3} A {:.3} gtA {:.3} ldr.r {:.3} gt.r {:.3}",
            rendered.gbuffer.alpha.get(x, y), view.alpha.get(x, y), r.x, gt.get(x, y).x);
    }
}
