fn main() {
    std::process::exit(infotime::cli::dispatch(std::env::args_os()));
}
