use ggds_core::raster::{render, RenderOptions};

fn main() {
    let (scene, cam) = ggds_core::bench::synthetic_scene(100_000, 512, 512, 1).unwrap();
    let frames: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    if frames == 0 {
        render(&scene, &cam, &RenderOptions::default()).unwrap();
        return;
    }
    let r = ggds_core::bench::measure_fps(&scene, &cam, &RenderOptions::default(), frames, 1).unwrap();
    println!("{r:?}");
}
