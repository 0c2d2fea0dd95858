fn main() {
    std::process::exit(ppsi_harness::cli::run(std::env::args_os()));
}
