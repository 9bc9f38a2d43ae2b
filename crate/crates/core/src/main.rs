fn main() { std::process::exit(fdmean::cli::run(std::env::args_os())); }
