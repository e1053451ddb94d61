fn main() {
    let status = subspace_erasure::cli::run(std::env::args_os());
    std::process::exit(status.code());
}
