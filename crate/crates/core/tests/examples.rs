//! Runs every example so they stay in sync with the library.

#[allow(dead_code)]
mod shape_table {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/shape_table.rs"
    ));
}

#[test]
fn shape_table_example_runs() {
    shape_table::run_example().expect("shape_table example");
}

#[allow(dead_code)]
mod render_scenes {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/render_scenes.rs"
    ));
}

#[test]
fn render_scenes_example_runs() {
    render_scenes::run_example().expect("render_scenes example");
}

#[allow(dead_code)]
mod file_formats {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/file_formats.rs"
    ));
}

#[test]
fn file_formats_example_runs() {
    file_formats::run_example().expect("file_formats example");
}

#[allow(dead_code)]
mod gradient_check {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/gradient_check.rs"
    ));
}

#[test]
fn gradient_check_example_runs() {
    gradient_check::run_example().expect("gradient_check example");
}

#[allow(dead_code)]
mod train_toy {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/train_toy.rs"
    ));
}

#[test]
fn train_toy_example_runs() {
    train_toy::run_example().expect("train_toy example");
}

#[allow(dead_code)]
mod explain {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/explain.rs"));
}

#[test]
fn explain_example_runs() {
    explain::run_example().expect("explain example");
}

#[allow(dead_code)]
mod shift_experiment {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/shift_experiment.rs"
    ));
}

#[test]
fn shift_experiment_example_runs() {
    shift_experiment::run_example().expect("shift_experiment example");
}
