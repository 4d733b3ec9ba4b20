fn main() {
    std::process::exit(tricomi_lab::cli::run_from(std::env::args_os()));
}
