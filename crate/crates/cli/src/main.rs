fn main() {
    std::process::exit(mosaic_cli::main_with(std::env::args()));
}
