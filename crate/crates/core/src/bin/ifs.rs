fn main() {
    std::process::exit(ifs_core::cli::run(std::env::args_os()));
}
