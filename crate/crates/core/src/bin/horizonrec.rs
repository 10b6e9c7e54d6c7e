fn main() {
    std::process::exit(horizonrec::cli::dispatch(std::env::args_os()));
}
