fn main() {
    std::process::exit(ehvm::cli::run_main());
}
