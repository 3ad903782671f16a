fn main() {
    std::process::exit(cytoeval::cli::run(std::env::args_os()));
}
