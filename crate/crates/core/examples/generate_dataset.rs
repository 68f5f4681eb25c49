//! Generate a small synthetic dataset, write it, read it back.

use dsta::data::{generate, read_dataset, write_dataset, Split, SyntheticSpec, CLASS_NAMES};

fn main() -> dsta::Result<()> {
    let spec = SyntheticSpec {
        val_items: 8,
        test_items: 8,
        seed: 1,
        ..SyntheticSpec::default()
    };
    let ds = generate(&spec, 48)?;
    let path = std::env::temp_dir().join("dsta-example-dataset.bin");
    write_dataset(&ds, &path)?;
    let back = read_dataset(&path)?;
    assert_eq!(back, ds);

    for split in [Split::Train, Split::Val, Split::Test] {
        let videos = back.split(split);
        let positives = videos.iter().filter(|v| v.label == 1).count();
        println!("{split:?}: {} videos, {positives} {}", videos.len(), CLASS_NAMES[1]);
    }
    let v = &back.videos[0];
    let sums: Vec<String> = (0..v.frames).map(|t| format!("{:.1}", v.frame_sum(t))).collect();
    println!("video 0 label {} frame sums [{}]", v.label, sums.join(", "));
    println!("wrote {}", path.display());
    Ok(())
}
