fn main() {
    std::process::exit(locdistill_cli::dispatch(std::env::args_os()));
}
