//! Diagnostic: what each latent branch paints on its own.

use equiscene::datagen::{DatasetReader, Split};
use equiscene::frame::Frame;
use equiscene::model::{self, load_checkpoint, BackgroundCode, ObjectCode, SceneCode};
use equiscene::nn::Tensor;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (ckpt, data) = (&args[1], &args[2]);
    let (state, _) = load_checkpoint(std::path::Path::new(ckpt)).unwrap();
    let reader = DatasetReader::open(std::path::Path::new(data), Split::Test).unwrap();
    let s1 = reader.load_sequence(0).unwrap();
    let s2 = reader.load_sequence(1).unwrap();
    let (x1, x2) = (&s1.frames[0], &s2.frames[0]);
    let dims = [1, state.config.latent_channels, 16, 16];
    let zeros_o = || ObjectCode(Tensor::zeros(&dims));
    let zeros_b = || BackgroundCode(Tensor::zeros(&dims));
    let zo = model::encode_object(&state, x1);
    let zb = model::encode_background(&state, x1);
    let zo2 = model::encode_object(&state, x2);
    let zb2 = model::encode_background(&state, x2);
    let render = |o: &ObjectCode, b: &BackgroundCode| -> Frame {
        model::render(&state, &SceneCode(model::compose_scene(o, b).unwrap().0)).unwrap()
    };
    let rows = vec![
        vec![x1.clone(), render(&zo, &zb), render(&zo, &zeros_b()), render(&zeros_o(), &zb)],
        vec![x2.clone(), render(&zo2, &zb2), render(&zo2, &zeros_b()), render(&zeros_o(), &zb2)],
        // cross: object of x1 on background of x2, and vice versa
        vec![render(&zo, &zb2), render(&zo2, &zb), x1.clone(), x2.clone()],
    ];
    equiscene::manip::render_figure_grid(&rows, std::path::Path::new(&args[3])).unwrap();
    // Numeric leak scores: how much the lone-branch renders deviate.
    let objs_only = render(&zo, &zeros_b());
    let bg_only = render(&zeros_o(), &zb);
    let bgf = Frame::new(
        reader.backgrounds()[s1.background_id as usize]
            .rendered
            .iter()
            .map(|&v| v as f32)
            .collect(),
    )
    .unwrap();
    println!("mse(bg_branch_alone, true_bg)   = {:.5}", bg_only.mse(&bgf));
    println!("mse(obj_branch_alone, true_bg)  = {:.5}", objs_only.mse(&bgf));
    println!("mse(cross_swap, true x2 bg)     = {:.5}", render(&zo, &zb2).mse(x2));
}
