use glam::{DVec2, DVec3};
use relightsplat::dataset::load_split;
use relightsplat::envio::load_environment;
use relightsplat::field::spherical_init;
use relightsplat::math::logit;
use relightsplat::metrics::{mask_iou, metric_psnr};
use relightsplat::shading::{PrefilterConfig, ShadeOptions};
use relightsplat::trainer::render_view;

fn main() {
    let root = std::path::Path::new("/tmp/sphere128");
    let test = load_split(root, "transforms_test.json").unwrap();
    let mut env = load_environment(&root.join("env.hdr"), 64).unwrap();
    env.prefilter(&PrefilterConfig::default());
    for (count, factor) in [(3000usize, 0.9), (5000, 0.9), (9000, 0.9), (5000, 0.7), (5000, 1.2)] {
        let mut cloud = spherical_init(count, 1.0, 5).unwrap();
        let spacing = (4.0 * std::f64::consts::PI / count as f64).sqrt();
        for s in &mut cloud.scales { *s = DVec2::splat(spacing * factor); }
        for a in &mut cloud.albedo { *a = DVec3::new(logit(0.7), logit(0.5), logit(0.3)); }
        for r in &mut cloud.roughness { *r = logit(0.6); }
        for m in &mut cloud.metallic { *m = logit(0.001); }
        let (mut psnr, mut iou) = (0.0, 1.0f64);
        for view in &test.views {
            let rendered = render_view(&cloud, &env, &view.camera, &ShadeOptions::default()).unwrap();
            psnr += metric_psnr(&rendered.ldr, &view.composited(), None).unwrap();
            iou = iou.min(mask_iou(&rendered.gbuffer.alpha, &view.alpha));
        }
        println!("N={count} x{factor}: psnr {:.2} iou {:.4}", psnr / 4.0, iou);
    }
}
