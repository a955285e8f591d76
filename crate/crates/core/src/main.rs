fn main() {
    std::process::exit(harris_lab::cli::run(std::env::args_os()));
}
