fn main() {
    std::process::exit(biased_rip_cli::run(std::env::args_os()));
}
