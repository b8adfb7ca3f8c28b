//! Build one searchable cell, evaluate it as a softmax mixture and as a
//! discrete genotype, and print the genotype text format.
//!
//! cargo run --example nas_cells

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgbd_sod::autograd::{ParamStore, Tape, Tensor};
use rgbd_sod::cells::{CellArch, CellMode, CellParams, CellSpec, CellType, OpId, NUM_OPS};
use rgbd_sod::genotype::{discretize, ArchParams};

fn main() -> rgbd_sod::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let specs = [
        CellSpec::new(CellType::MM, 6)?,
        CellSpec::new(CellType::MS, 5)?,
        CellSpec::new(CellType::GA, 6)?,
        CellSpec::new(CellType::SR, 4)?,
    ];
    for s in &specs {
        println!("{}: {} inputs, {} edges", s.cell_type.name(), s.cell_type.num_inputs(), s.num_edges());
    }

    let ms = specs[1];
    let mut store = ParamStore::new();
    let cell = CellParams::new(&mut store, "ms", ms, &[8, 4, 6], 4, CellMode::Supernet, &mut rng)?;

    let mut alpha = ArchParams::init(specs, &mut rng);
    // push every MS edge towards the 3x3 convolution
    for row in alpha.logits_mut(CellType::MS).data_mut().chunks_mut(NUM_OPS) {
        row[OpId::Conv3.index()] += 40.0;
    }
    println!("MS entropy after saturating: {:.2e}", alpha.entropy(CellType::MS));
    let genotype = discretize(&alpha, false);

    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    let abound = alpha.store.bind(&tape, false);
    let weights = alpha.weights(&abound);
    let inputs = [
        tape.constant(Tensor::from_fn(&[8, 8, 8], |i| (i as f64 * 0.1).sin())),
        tape.constant(Tensor::from_fn(&[4, 4, 4], |i| (i as f64 * 0.2).cos())),
        tape.constant(Tensor::from_fn(&[6, 8, 8], |i| (i % 5) as f64 / 5.0)),
    ];
    let mixed = cell.forward(&inputs, CellArch::Mixed(&weights[CellType::MS.index()]), &bound)?;
    let discrete = cell.forward(&inputs, CellArch::Discrete(genotype.cell(CellType::MS)), &bound)?;
    println!("cell output {:?}", mixed.shape());
    println!("mixed vs discrete: {:.2e}", mixed.value().max_abs_diff(&discrete.value()));

    println!("\n{}", genotype.to_text());
    Ok(())
}
