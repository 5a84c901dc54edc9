fn main() {
    std::process::exit(mpq_core::cli::run(std::env::args_os()));
}
