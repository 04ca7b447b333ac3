fn main() {
    std::process::exit(panel_qpe::cli::main());
}
