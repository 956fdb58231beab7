fn main() {
    std::process::exit(wavresnet_cli::cli_dispatch(std::env::args_os()));
}
