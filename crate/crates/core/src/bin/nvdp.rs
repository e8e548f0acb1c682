fn main() {
    std::process::exit(nvdp::cli::run(std::env::args_os()));
}
