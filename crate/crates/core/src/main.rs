fn main() {
    std::process::exit(recdcl::cli::run(std::env::args_os()));
}
