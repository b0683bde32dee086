//! The three coefficient families and a CSV round trip.
use stgms::coefficient::{
    field_four_channels_rotated, field_four_channels_translated, field_translated_inclusions, load_field, save_field,
    Motion,
};
use stgms::grid::{build_mesh, GridSpec, TimePartition};

fn main() -> stgms::Result<()> {
    let mesh = build_mesh(GridSpec::unit_square(10, 10), TimePartition::new(1.6, 2, 8))?;
    let fields = [
        ("inclusions", field_translated_inclusions(&mesh, 1e6, Motion::DEFAULT)?),
        ("channels", field_four_channels_translated(&mesh, 1e6, Motion::DEFAULT)?),
        ("rotating channels", field_four_channels_rotated(&mesh, 1e6, 2.0)?),
    ];
    for (name, field) in &fields {
        let high = field.step(0).iter().filter(|&&v| v > 1.0).count();
        let changed = (0..field.n_steps)
            .filter(|&k| k > 0 && field.step(k) != field.step(k - 1))
            .count();
        println!("{name:>18}: {high} high cells, range [{:e}, {:e}], changes at {changed} steps", field.min(), field.max());
    }
    let dir = std::env::temp_dir().join("stgms-field-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("inclusions.csv");
    save_field(&fields[0].1, &path)?;
    assert_eq!(load_field(&path)?.values(), fields[0].1.values());
    println!("round trip through {} ok", path.display());
    Ok(())
}
