fn main() { std::process::exit(kinetrate::cli_io::main_entry()); }
