fn main() {
    std::process::exit(nc2c::cli::run(std::env::args_os()));
}
