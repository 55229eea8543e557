fn main() {
    std::process::exit(ftr_core::cli::run_from(std::env::args_os()));
}
