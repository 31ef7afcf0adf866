fn main() {
    std::process::exit(sideband_steer::cli::main_with(std::env::args_os()));
}
