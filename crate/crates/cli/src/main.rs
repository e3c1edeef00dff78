fn main() {
    std::process::exit(poolrisk::run(std::env::args_os()));
}
